#include "apvt/model.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "apvt/ops.hpp"

namespace apvt {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct VariantRow {
  const char* name;
  std::array<std::size_t, kNumStages> depths;
  std::size_t paths;
  std::size_t head_dim;
};

constexpr std::array<VariantRow, 5> kVariants{{
    {"APVT-8-2x-a", {2, 2, 2, 2}, 2, 32},
    {"APVT-8-2x-b", {2, 2, 2, 2}, 2, 64},
    {"APVT-16-2x-b", {3, 4, 6, 3}, 2, 64},
    {"APVT-8-4x-a", {2, 2, 2, 2}, 3, 32},
    {"APVT-16-4x-a", {3, 4, 6, 3}, 3, 32},
}};

// [B, h, w, C] -> [B, (h/P)*(w/P), P*P*C], each row one P x P block.
template <typename T>
Tensor<T> blockify(const Tensor<T>& grid, std::size_t patch) {
  const std::size_t B = grid.dim(0), h = grid.dim(1), w = grid.dim(2), C = grid.dim(3);
  auto t = reshape(grid, {B, h / patch, patch, w / patch, patch, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B, (h / patch) * (w / patch), patch * patch * C});
}

void check_patch_divisible(std::size_t h, std::size_t w, std::size_t patch, std::size_t stage_index) {
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("stage " + std::to_string(stage_index + 1) + ": extent " + std::to_string(h) + "x" +
                         std::to_string(w) + " is not divisible by patch size " + std::to_string(patch));
  }
}

template <typename T>
TokenMap<T> embed_grid(const Tensor<T>& grid, const PatchEmbedParams<T>& params, std::size_t patch) {
  const std::size_t oh = grid.dim(1) / patch, ow = grid.dim(2) / patch;
  const std::size_t fan_in = patch * patch * grid.dim(3);
  if (params.proj.in_features() != fan_in) {
    throw DimensionError("patch embedding expects " + std::to_string(params.proj.in_features()) +
                         " values per patch, input provides " + std::to_string(fan_in));
  }
  auto tokens = linear(blockify(grid, patch), params.proj.weight, params.proj.bias);
  return {layer_norm(tokens, params.norm.gamma, params.norm.beta), oh, ow};
}

}  // namespace

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& v : kVariants) n.emplace_back(v.name);
    return n;
  }();
  return names;
}

ModelConfig variant_config(std::string_view name) {
  const auto key = lower(name);
  for (const auto& v : kVariants) {
    if (lower(v.name) == key) {
      ModelConfig cfg;
      cfg.name = v.name;
      cfg.depths = v.depths;
      cfg.paths = v.paths;
      cfg.head_dim = v.head_dim;
      return cfg;
    }
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

void validate(const ModelConfig& config) {
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (config.depths[s] == 0) throw ConfigError("stage " + std::to_string(s + 1) + " depth must be >= 1");
  }
  if (config.paths == 0) throw ConfigError("paths must be >= 1");
  if (config.head_dim == 0) throw ConfigError("head dimension must be >= 1");
  if (config.num_classes < 2) throw ConfigError("need at least 2 classes");
  if (config.in_channels == 0) throw ConfigError("input channels must be >= 1");
  if (config.input_h == 0 || config.input_w == 0 || config.input_h % kTotalStride != 0 ||
      config.input_w % kTotalStride != 0) {
    throw ConfigError("input size " + std::to_string(config.input_h) + "x" + std::to_string(config.input_w) +
                      " is not divisible by " + std::to_string(kTotalStride));
  }
}

std::array<StageSpec, kNumStages> stage_specs(const ModelConfig& config) {
  std::array<StageSpec, kNumStages> specs{};
  for (std::size_t s = 0; s < kNumStages; ++s) {
    specs[s] = {kStagePatchSizes[s], kStageHeads[s] * config.head_dim, kStageExpansions[s], kStageHeads[s],
                kStageReductions[s], config.depths[s]};
  }
  return specs;
}

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Model<T> model;
  model.config = config;
  ParamFactory<T> root(model.params, seed);
  std::size_t in_dim = config.in_channels;
  std::size_t gh = config.input_h, gw = config.input_w;
  const auto specs = stage_specs(config);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto& spec = specs[s];
    auto scope = root.scoped("stage" + std::to_string(s + 1));
    Stage<T> stage;
    stage.spec = spec;
    gh /= spec.patch_size;
    gw /= spec.patch_size;
    stage.grid_h = gh;
    stage.grid_w = gw;
    auto pe = scope.scoped("patch_embed");
    stage.patch_embed.proj = pe.linear("proj", in_dim * spec.patch_size * spec.patch_size, spec.dim);
    stage.patch_embed.norm = pe.layer_norm("norm", spec.dim);
    stage.pos_grid = scope.constant("pos_embed", {gh * gw, spec.dim}, T(0), ParamKind::kPositionGrid);
    for (std::size_t b = 0; b < spec.depth; ++b) {
      auto block_scope = scope.scoped("blocks." + std::to_string(b));
      stage.blocks.push_back(GroupEncoderParams<T>::create(block_scope, spec.dim, spec.num_heads, spec.reduction,
                                                           spec.expansion, config.paths));
    }
    stage.norm = scope.layer_norm("norm", spec.dim);
    model.stages.push_back(std::move(stage));
    in_dim = spec.dim;
  }
  model.head = root.linear("head", in_dim, config.num_classes);
  return model;
}

template <typename T>
TokenMap<T> patch_embed_forward(const Tensor<T>& images, const PatchEmbedParams<T>& params, std::size_t patch_size,
                                std::size_t stage_index) {
  if (images.rank() != 4) throw DimensionError("images must be [B, C, H, W], got " + shape_str(images.shape()));
  check_patch_divisible(images.dim(2), images.dim(3), patch_size, stage_index);
  return embed_grid(permute(images, {0, 2, 3, 1}), params, patch_size);
}

template <typename T>
TokenMap<T> patch_embed_forward(const TokenMap<T>& x, const PatchEmbedParams<T>& params, std::size_t patch_size,
                                std::size_t stage_index) {
  x.validate();
  check_patch_divisible(x.h, x.w, patch_size, stage_index);
  return embed_grid(reshape(x.tokens, {x.batch(), x.h, x.w, x.channels()}), params, patch_size);
}

template <typename T>
TokenMap<T> position_embed(const TokenMap<T>& x, const Tensor<T>& grid, std::size_t grid_h, std::size_t grid_w) {
  x.validate();
  if (grid.rank() != 2 || grid.dim(0) != grid_h * grid_w || grid.dim(1) != x.channels()) {
    throw DimensionError("position grid " + shape_str(grid.shape()) + " does not fit " + std::to_string(grid_h) +
                         "x" + std::to_string(grid_w) + " with width " + std::to_string(x.channels()));
  }
  if (grid_h == x.h && grid_w == x.w) return {add(x.tokens, grid), x.h, x.w};
  auto resized = resize_bilinear(reshape(grid, {grid_h, grid_w, x.channels()}), x.h, x.w);
  return {add(x.tokens, reshape(resized, {x.h * x.w, x.channels()})), x.h, x.w};
}

template <typename T>
std::vector<TokenMap<T>> extract_features(const Model<T>& model, const Tensor<T>& images) {
  const auto& cfg = model.config;
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels) {
    throw DimensionError("images must be [B, " + std::to_string(cfg.in_channels) + ", H, W], got " +
                         shape_str(images.shape()));
  }
  if (images.dim(2) % kTotalStride != 0 || images.dim(3) % kTotalStride != 0) {
    throw DimensionError("input extent " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                         " is not divisible by " + std::to_string(kTotalStride));
  }
  std::vector<TokenMap<T>> features;
  TokenMap<T> x;
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    const auto& stage = model.stages[s];
    x = s == 0 ? patch_embed_forward(images, stage.patch_embed, stage.spec.patch_size, s)
               : patch_embed_forward(x, stage.patch_embed, stage.spec.patch_size, s);
    x = position_embed(x, stage.pos_grid, stage.grid_h, stage.grid_w);
    for (const auto& block : stage.blocks) x = group_encoder_forward(x, block);
    x.tokens = layer_norm(x.tokens, stage.norm.gamma, stage.norm.beta);
    features.push_back(x);
  }
  return features;
}

template <typename T>
Tensor<T> classify(const Model<T>& model, const Tensor<T>& images) {
  const auto features = extract_features(model, images);
  auto pooled = mean(features.back().tokens, 1);
  return linear(pooled, model.head.weight, model.head.bias);
}

template <typename T>
ParamCount count_parameters(const Model<T>& model) {
  ParamCount count;
  for (const auto& e : model.params.entries()) {
    const std::size_t n = e.tensor.numel();
    count.total += n;
    const std::string& name = e.name;
    if (name.rfind("head.", 0) == 0) {
      count.head += n;
      continue;
    }
    if (name.rfind("stage", 0) != 0 || name.size() < 7) throw std::logic_error("unclassified parameter " + name);
    const std::size_t s = static_cast<std::size_t>(name[5] - '1');
    if (s >= kNumStages) throw std::logic_error("unclassified parameter " + name);
    auto& st = count.stages[s];
    const std::string rest = name.substr(7);
    if (rest.rfind("patch_embed.", 0) == 0) {
      st.patch_embed += n;
    } else if (rest == "pos_embed") {
      st.pos_embed += n;
    } else if (rest.rfind("norm.", 0) == 0) {
      st.norm += n;
    } else if (rest.rfind("blocks.", 0) == 0) {
      st.encoder += n;
      if (rest.find(".attn.reduce") != std::string::npos) {
        st.encoder_reduction += n;
      } else if (rest.find(".attn.") != std::string::npos) {
        st.encoder_attention += n;
      } else if (rest.find(".ffn.") != std::string::npos) {
        st.encoder_ffn += n;
      } else {
        st.encoder_norms += n;
      }
    } else {
      throw std::logic_error("unclassified parameter " + name);
    }
  }
  return count;
}

#define APVT_INSTANTIATE_MODEL(T)                                                                              \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                                         \
  template TokenMap<T> patch_embed_forward(const Tensor<T>&, const PatchEmbedParams<T>&, std::size_t,          \
                                           std::size_t);                                                       \
  template TokenMap<T> patch_embed_forward(const TokenMap<T>&, const PatchEmbedParams<T>&, std::size_t,        \
                                           std::size_t);                                                       \
  template TokenMap<T> position_embed(const TokenMap<T>&, const Tensor<T>&, std::size_t, std::size_t);         \
  template std::vector<TokenMap<T>> extract_features(const Model<T>&, const Tensor<T>&);                       \
  template Tensor<T> classify(const Model<T>&, const Tensor<T>&);                                              \
  template ParamCount count_parameters(const Model<T>&);

APVT_INSTANTIATE_MODEL(float)
APVT_INSTANTIATE_MODEL(double)

}  // namespace apvt
