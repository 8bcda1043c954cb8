#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/dataset.hpp"
#include "preemptkit/network.hpp"
#include "preemptkit/tensor.hpp"

namespace pk::pipeline {

// Subcommands in the order the CLI lists them.
const std::vector<std::string>& subcommands();

// Built-in configuration of a subcommand. Throws ConfigError for unknown names.
nlohmann::json default_config(const std::string& subcommand);

// The named seed that --seed overrides for a subcommand.
std::string primary_seed(const std::string& subcommand);

// Merges a config file over the defaults and applies the --seed flag
// (precedence: flag > file > default). Named seeds missing from the file are
// derived from the top-level "seed". Relative input paths are made absolute
// against `base_dir`. A RunManifest may be given in place of a config file;
// its resolved config is used as is and its subcommand must match.
nlohmann::json resolve_config(const std::string& subcommand, const nlohmann::json& file,
                              std::optional<std::uint64_t> seed_flag, const std::filesystem::path& base_dir);

// Runs a resolved config, writing artifacts and manifest.json under out_dir.
// Returns the manifest.
nlohmann::json run(const std::string& subcommand, const nlohmann::json& resolved, const std::filesystem::path& out_dir);

// Reads a config or manifest file, resolves it and runs it.
nlohmann::json run_file(const std::string& subcommand, const std::filesystem::path& config_path,
                        std::optional<std::uint64_t> seed_flag, const std::filesystem::path& out_dir);

// Dataset described by a "data" config object.
Dataset load_data(const nlohmann::json& spec);

// Weights plus their model card (<weights>.json). The card's weight hash must
// match the file.
Model load_model(const std::filesystem::path& weights_path);

// A set of images keyed by sample id, written by `defend` and `attack`.
struct ExampleSet {
  std::string kind;
  std::string config_fingerprint;
  nlohmann::json meta;
  std::vector<std::uint64_t> ids;
  std::vector<std::size_t> labels;
  std::vector<Tensor> images;

  nlohmann::json to_json() const;
  static ExampleSet from_json(const nlohmann::json& j);
};

ExampleSet load_examples(const std::filesystem::path& path);

// Command-line entry point; returns the process exit code.
int main(int argc, char** argv);

}  // namespace pk::pipeline
