#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "apvt/attention.hpp"
#include "apvt/blocks.hpp"
#include "apvt/params.hpp"

namespace apvt {

inline constexpr std::size_t kNumStages = 4;
inline constexpr std::array<std::size_t, kNumStages> kStagePatchSizes{4, 2, 2, 2};
inline constexpr std::array<std::size_t, kNumStages> kStageHeads{1, 2, 5, 8};
inline constexpr std::array<std::size_t, kNumStages> kStageExpansions{8, 8, 4, 4};
inline constexpr std::array<std::size_t, kNumStages> kStageReductions{8, 4, 2, 1};
// Product of the stage patch sizes.
inline constexpr std::size_t kTotalStride = 32;

struct StageSpec {
  std::size_t patch_size = 0;
  std::size_t dim = 0;
  std::size_t expansion = 0;
  std::size_t num_heads = 0;
  std::size_t reduction = 0;
  std::size_t depth = 0;
};

struct ModelConfig {
  std::string name = "custom";
  std::array<std::size_t, kNumStages> depths{};
  std::size_t paths = 0;
  std::size_t head_dim = 0;
  std::size_t num_classes = 10;
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t in_channels = 3;
};

// Named variants: APVT-8-2x-a, APVT-8-2x-b, APVT-16-2x-b, APVT-8-4x-a,
// APVT-16-4x-a. Lookup ignores case. Unknown names raise ConfigError.
ModelConfig variant_config(std::string_view name);
const std::vector<std::string>& variant_names();

void validate(const ModelConfig& config);
std::array<StageSpec, kNumStages> stage_specs(const ModelConfig& config);

template <typename T>
struct PatchEmbedParams {
  LinearParams<T> proj;  // [C_in * P * P, D]
  LayerNormParams<T> norm;
};

template <typename T>
struct Stage {
  StageSpec spec;
  PatchEmbedParams<T> patch_embed;
  Tensor<T> pos_grid;  // [grid_h * grid_w, D]
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<GroupEncoderParams<T>> blocks;
  LayerNormParams<T> norm;
};

/// Four-stage pyramid with a pooled linear classifier. Owns its parameter
/// registry; the stage structs hold handles into it. Move-only.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  ModelConfig config;
  ParamStore<T> params;
  std::vector<Stage<T>> stages;
  LinearParams<T> head;
};

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

// images: [B, C_in, H, W]. stage_index is 0-based and only used in messages.
template <typename T>
TokenMap<T> patch_embed_forward(const Tensor<T>& images, const PatchEmbedParams<T>& params, std::size_t patch_size,
                                std::size_t stage_index);
template <typename T>
TokenMap<T> patch_embed_forward(const TokenMap<T>& x, const PatchEmbedParams<T>& params, std::size_t patch_size,
                                std::size_t stage_index);

// Adds the learned grid, bilinearly resampled when the extents differ.
template <typename T>
TokenMap<T> position_embed(const TokenMap<T>& x, const Tensor<T>& grid, std::size_t grid_h, std::size_t grid_w);

// Per-stage outputs with strides 4, 8, 16, 32.
template <typename T>
std::vector<TokenMap<T>> extract_features(const Model<T>& model, const Tensor<T>& images);

// Logits [B, num_classes]: final stage tokens, normed, mean-pooled, projected.
template <typename T>
Tensor<T> classify(const Model<T>& model, const Tensor<T>& images);

struct StageParamCount {
  std::size_t patch_embed = 0;
  std::size_t pos_embed = 0;
  std::size_t encoder = 0;
  std::size_t encoder_attention = 0;  // query/key/value/out projections
  std::size_t encoder_reduction = 0;  // spatial-reduction projection and norm
  std::size_t encoder_ffn = 0;
  std::size_t encoder_norms = 0;
  std::size_t norm = 0;

  std::size_t total() const { return patch_embed + pos_embed + encoder + norm; }
};

struct ParamCount {
  std::array<StageParamCount, kNumStages> stages{};
  std::size_t head = 0;
  std::size_t total = 0;
};

template <typename T>
ParamCount count_parameters(const Model<T>& model);

}  // namespace apvt
