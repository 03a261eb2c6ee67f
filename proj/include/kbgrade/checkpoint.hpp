#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "kbgrade/model.hpp"

namespace kbgrade {

/// A model plus free-form run metadata (training config, seed, split).
struct Checkpoint {
  Model model;
  std::map<std::string, std::string> metadata;
};

/// Plain-text checkpoint. Doubles are written in shortest round-trip form, so
/// write-then-read reproduces every parameter bit for bit.
void write_checkpoint(std::ostream& out, const Model& model,
                      const std::map<std::string, std::string>& metadata = {});
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace kbgrade
