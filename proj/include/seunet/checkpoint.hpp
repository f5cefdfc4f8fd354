#pragma once

// Checkpoint file layout:
//
//   "SEUTCKPT"                     8 bytes
//   version                        u32, little-endian
//   header                         UTF-8 "key: value" lines ending with an empty line
//   payload                        f32 little-endian, row-major, in directory order
//
// The header records the architecture, epoch, seed, optimizer step, run configuration
// and one "tensor: <name> f32 <shape> <offset>" line per stored tensor, where offset is
// the byte position inside the payload. Stored tensors are the model parameters, the
// batch-norm running statistics and the Adam moments ("optim.m.<name>", "optim.v.<name>").

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seunet/model.hpp"
#include "seunet/optim.hpp"

namespace seunet {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'U', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kNotCheckpoint, kVersion, kTruncated, kMalformed, kIo, kMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct CheckpointData {
  VariantSpec spec;
  std::int64_t epoch = 0;
  std::uint64_t seed = 0;
  std::int64_t adam_step = 0;
  std::vector<std::pair<std::string, std::string>> config;  // free-form run settings
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Snapshot of model (and optionally optimizer) state.
CheckpointData capture_checkpoint(SeUNetTrans<float>& model, const Adam<float>* optimizer, std::int64_t epoch,
                                  std::uint64_t seed, std::vector<std::pair<std::string, std::string>> config = {});

/// Copies stored tensors into `model` (and `optimizer` when given). Every model tensor
/// must be present with a matching shape.
void apply_checkpoint(const CheckpointData& data, SeUNetTrans<float>& model, Adam<float>* optimizer);

std::string checkpoint_filename(std::int64_t epoch);

}  // namespace seunet
