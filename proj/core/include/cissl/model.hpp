#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"

namespace cissl {

enum class ProjectionMode { identity, linear, nonlinear };

enum class ParamGroup { extractor = 0, backbone_head = 1, aux_head = 2, projector = 3 };

struct ModelShape {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t repr_dim = 32;
  std::size_t num_classes = 6;
  std::size_t proj_dim = 32;
  ProjectionMode projection = ProjectionMode::linear;

  // Width of the contrastive feature f; the representation itself under identity projection.
  std::size_t feature_dim() const noexcept {
    return projection == ProjectionMode::identity ? repr_dim : proj_dim;
  }
  bool operator==(const ModelShape&) const = default;
};

struct Parameter {
  Tensor2D value;
  Tensor2D grad;
  Tensor2D velocity;  // empty until momentum is used
};

// y = x W + b, with W stored in_dim x out_dim.
struct Affine {
  Parameter weight;
  Parameter bias;

  Affine() = default;
  Affine(std::size_t in_dim, std::size_t out_dim);
  std::size_t in_dim() const noexcept { return weight.value.rows(); }
  std::size_t out_dim() const noexcept { return weight.value.cols(); }
};

struct ParamRef {
  std::string name;
  ParamGroup group;
  Parameter* param;
};

struct ConstParamRef {
  std::string name;
  ParamGroup group;
  const Parameter* param;
};

// Extractor F (affine + ReLU stack), backbone head, auxiliary head H_A and
// projector P, each with gradient buffers of the same shape as the values.
class CisslModel {
 public:
  CisslModel() = default;
  // Glorot-uniform weights from rng, zero biases.
  CisslModel(const ModelShape& shape, Rng& rng);

  const ModelShape& shape() const noexcept { return shape_; }

  std::vector<Affine>& extractor() noexcept { return extractor_; }
  const std::vector<Affine>& extractor() const noexcept { return extractor_; }
  Affine& backbone_head() noexcept { return backbone_; }
  const Affine& backbone_head() const noexcept { return backbone_; }
  Affine& aux_head() noexcept { return aux_; }
  const Affine& aux_head() const noexcept { return aux_; }
  // Absent under ProjectionMode::identity.
  std::optional<Affine>& projector() noexcept { return projector_; }
  const std::optional<Affine>& projector() const noexcept { return projector_; }

  // Stable order: extractor layers, backbone head, aux head, projector; weight before bias.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t parameter_count() const;

  void zero_grad();

  // Frozen groups receive no gradient in backward and are skipped by sgd_step.
  void set_frozen(ParamGroup group, bool frozen) noexcept {
    frozen_[static_cast<std::size_t>(group)] = frozen;
  }
  bool is_frozen(ParamGroup group) const noexcept {
    return frozen_[static_cast<std::size_t>(group)];
  }

  // Parameter values only; gradients and freeze flags are ignored.
  bool same_parameters(const CisslModel& other) const;

 private:
  ModelShape shape_;
  std::vector<Affine> extractor_;
  Affine backbone_;
  Affine aux_;
  std::optional<Affine> projector_;
  std::array<bool, 4> frozen_{};
};

enum Head : unsigned {
  kBackboneHead = 1u << 0,
  kAuxHead = 1u << 1,
  kProjection = 1u << 2,
  kAllHeads = kBackboneHead | kAuxHead | kProjection,
};

// Cached activations of one forward call; consumed by backward.
struct ForwardPass {
  unsigned heads = 0;
  bool valid = false;
  Tensor2D input;
  std::vector<Tensor2D> layer_inputs;  // input to each extractor layer
  std::vector<Tensor2D> layer_pre;     // pre-ReLU output of each extractor layer
  Tensor2D repr;                       // r = F(x)
  Tensor2D backbone_logits, backbone_probs;
  Tensor2D aux_logits, aux_probs;
  Tensor2D proj_pre;  // projector affine output before optional ReLU
  Tensor2D features;  // f = P(F(x))
};

// Upstream gradients, one per head; an empty tensor means that head gets none.
struct HeadGrads {
  Tensor2D backbone_logits;
  Tensor2D aux_logits;
  Tensor2D features;
};

ForwardPass forward(const CisslModel& model, const Tensor2D& batch, unsigned heads = kAllHeads);

// Accumulates dL/dtheta into the gradient buffers. Throws std::logic_error
// when the pass is not a completed forward of this model.
void backward(CisslModel& model, const ForwardPass& pass, const HeadGrads& grads);

struct SgdOptions {
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// theta <- theta - lr * grad, then clears gradients. Throws NumericError
// naming the first parameter with a non-finite gradient (no update applied).
void sgd_step(CisslModel& model, double lr, const SgdOptions& options = {});

// Flat binary snapshot: "CSSL", u32 version, then per tensor u32 rows, u32 cols
// and a little-endian f64 payload.
inline constexpr std::uint32_t kSnapshotVersion = 1;
void write_tensor_file(const std::filesystem::path& path, const std::vector<const Tensor2D*>& tensors);
std::vector<Tensor2D> read_tensor_file(const std::filesystem::path& path);

void save_parameters(const CisslModel& model, const std::filesystem::path& path);
// Shapes must match the model exactly.
void load_parameters(CisslModel& model, const std::filesystem::path& path);

}  // namespace cissl
