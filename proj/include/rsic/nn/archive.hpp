#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsic/nn/parameters.hpp"

namespace rsic::nn {

// name -> tensor archive shared by checkpoints and backbone weights.
//
// Layout (little-endian):
//   magic "RSICTNS1"
//   u64 entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data[prod(dims)]
// Entries are written in name order, so equal contents give equal bytes.
using TensorArchive = std::map<std::string, Tensor>;

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

// Snapshot of parameter values, optionally restricted to names starting with `prefix`
// (the prefix is stripped from the archive names).
TensorArchive to_archive(const ParameterStore& params, const std::string& prefix = "");

// Copies archive tensors into parameters named prefix + archive name. Strict: every
// parameter under `prefix` must be present with a matching shape and the archive may
// not carry extra names. Throws ArchiveMismatch listing every offender.
void load_into(ParameterStore& params, const TensorArchive& archive, const std::string& prefix = "");

class ArchiveError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ArchiveMismatch : public ArchiveError {
  public:
    ArchiveMismatch(std::string message, std::vector<std::string> offenders)
        : ArchiveError(std::move(message)), offenders_(std::move(offenders)) {}
    const std::vector<std::string>& offenders() const { return offenders_; }

  private:
    std::vector<std::string> offenders_;
};

}  // namespace rsic::nn
