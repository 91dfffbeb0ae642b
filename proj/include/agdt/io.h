// SPDX-License-Identifier: Apache-2.0
/**
 * @file   io.h
 * @brief  Whole-file reads, atomic writes and the FNV-1a digest.
 */
#ifndef AGDT_IO_H
#define AGDT_IO_H

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace agdt {

/// Failure reading or writing a file; carries the path in the message.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path &path);

/// Write to a sibling temporary file, then rename over `path`.
void write_file_atomic(const std::filesystem::path &path,
                       std::string_view bytes);

std::uint64_t fnv1a64(std::string_view bytes);

/// Sixteen lowercase hex digits.
std::string hex64(std::uint64_t v);

} // namespace agdt

#endif // AGDT_IO_H
