#include "cissl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cissl/errors.hpp"
#include "cissl/ops.hpp"

namespace cissl {

namespace {

void glorot_init(Affine& layer, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
  for (auto& w : layer.weight.value.values()) w = rng.uniform(-limit, limit);
}

Tensor2D affine_forward(const Affine& layer, const Tensor2D& x) {
  Tensor2D y = matmul(x, layer.weight.value);
  add_row_vector(y, layer.bias.value);
  return y;
}

Tensor2D relu(const Tensor2D& x) {
  Tensor2D y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Accumulates parameter grads of y = x W + b given dy; returns dx when wanted.
void affine_backward(Affine& layer, const Tensor2D& x, const Tensor2D& dy, bool accumulate_params,
                     Tensor2D* dx) {
  if (accumulate_params) {
    matmul_at_b_accumulate(x, dy, layer.weight.grad);
    accumulate_column_sums(dy, layer.bias.grad);
  }
  if (dx != nullptr) {
    const Tensor2D dxi = matmul(dy, transpose(layer.weight.value));
    if (dx->empty()) {
      *dx = dxi;
    } else {
      auto out = dx->values();
      const auto in = dxi.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    }
  }
}

void check_grad_shape(const Tensor2D& g, std::size_t rows, std::size_t cols, const char* what) {
  if (g.rows() != rows || g.cols() != cols) {
    throw std::invalid_argument(std::string("backward: gradient shape mismatch for ") + what);
  }
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

bool read_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error("snapshot: truncated tensor payload");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

const char* group_prefix(ParamGroup g) {
  switch (g) {
    case ParamGroup::extractor: return "extractor";
    case ParamGroup::backbone_head: return "backbone_head";
    case ParamGroup::aux_head: return "aux_head";
    case ParamGroup::projector: return "projector";
  }
  return "?";
}

}  // namespace

Affine::Affine(std::size_t in_dim, std::size_t out_dim) {
  weight.value = Tensor2D(in_dim, out_dim);
  weight.grad = Tensor2D(in_dim, out_dim);
  bias.value = Tensor2D(1, out_dim);
  bias.grad = Tensor2D(1, out_dim);
}

CisslModel::CisslModel(const ModelShape& shape, Rng& rng) : shape_(shape) {
  if (shape.input_dim == 0 || shape.repr_dim == 0 || shape.num_classes < 2) {
    throw ConfigError("model shape: input_dim and repr_dim must be positive, num_classes >= 2");
  }
  if (shape.projection != ProjectionMode::identity && shape.proj_dim == 0) {
    throw ConfigError("model shape: proj_dim must be positive");
  }
  std::size_t in = shape.input_dim;
  for (std::size_t h : shape.hidden) {
    if (h == 0) throw ConfigError("model shape: hidden widths must be positive");
    extractor_.emplace_back(in, h);
    in = h;
  }
  extractor_.emplace_back(in, shape.repr_dim);
  backbone_ = Affine(shape.repr_dim, shape.num_classes);
  aux_ = Affine(shape.repr_dim, shape.num_classes);
  if (shape.projection != ProjectionMode::identity) projector_.emplace(shape.repr_dim, shape.proj_dim);

  for (auto& l : extractor_) glorot_init(l, rng);
  glorot_init(backbone_, rng);
  glorot_init(aux_, rng);
  if (projector_) glorot_init(*projector_, rng);
}

std::vector<ParamRef> CisslModel::parameters() {
  std::vector<ParamRef> out;
  auto add = [&out](Affine& a, ParamGroup g, const std::string& stem) {
    out.push_back({stem + ".weight", g, &a.weight});
    out.push_back({stem + ".bias", g, &a.bias});
  };
  for (std::size_t i = 0; i < extractor_.size(); ++i) {
    add(extractor_[i], ParamGroup::extractor, "extractor." + std::to_string(i));
  }
  add(backbone_, ParamGroup::backbone_head, group_prefix(ParamGroup::backbone_head));
  add(aux_, ParamGroup::aux_head, group_prefix(ParamGroup::aux_head));
  if (projector_) add(*projector_, ParamGroup::projector, group_prefix(ParamGroup::projector));
  return out;
}

std::vector<ConstParamRef> CisslModel::parameters() const {
  std::vector<ConstParamRef> out;
  for (const auto& p : const_cast<CisslModel*>(this)->parameters()) {
    out.push_back({p.name, p.group, p.param});
  }
  return out;
}

std::size_t CisslModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.param->value.size();
  return n;
}

void CisslModel::zero_grad() {
  for (auto& p : parameters()) p.param->grad.fill(0.0);
}

bool CisslModel::same_parameters(const CisslModel& other) const {
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].param->value == b[i].param->value)) return false;
  }
  return true;
}

ForwardPass forward(const CisslModel& model, const Tensor2D& batch, unsigned heads) {
  const auto& shape = model.shape();
  if (batch.cols() != shape.input_dim) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, model expects " + std::to_string(shape.input_dim));
  }
  ForwardPass pass;
  pass.heads = heads;
  pass.input = batch;
  Tensor2D h = batch;
  for (const auto& layer : model.extractor()) {
    Tensor2D pre = affine_forward(layer, h);
    Tensor2D post = relu(pre);
    pass.layer_inputs.push_back(std::move(h));
    pass.layer_pre.push_back(std::move(pre));
    h = std::move(post);
  }
  pass.repr = std::move(h);

  if (heads & kBackboneHead) {
    pass.backbone_logits = affine_forward(model.backbone_head(), pass.repr);
    pass.backbone_probs = softmax_rows(pass.backbone_logits);
  }
  if (heads & kAuxHead) {
    pass.aux_logits = affine_forward(model.aux_head(), pass.repr);
    pass.aux_probs = softmax_rows(pass.aux_logits);
  }
  if (heads & kProjection) {
    switch (shape.projection) {
      case ProjectionMode::identity:
        pass.features = pass.repr;
        break;
      case ProjectionMode::linear:
        pass.proj_pre = affine_forward(*model.projector(), pass.repr);
        pass.features = pass.proj_pre;
        break;
      case ProjectionMode::nonlinear:
        pass.proj_pre = affine_forward(*model.projector(), pass.repr);
        pass.features = relu(pass.proj_pre);
        break;
    }
  }
  pass.valid = true;
  return pass;
}

void backward(CisslModel& model, const ForwardPass& pass, const HeadGrads& grads) {
  if (!pass.valid) throw std::logic_error("backward: no completed forward pass");
  const auto& shape = model.shape();
  const std::size_t n = pass.repr.rows();
  if (pass.layer_inputs.size() != model.extractor().size()) {
    throw std::logic_error("backward: forward pass belongs to a different model");
  }

  Tensor2D d_repr;
  if (!grads.backbone_logits.empty()) {
    if (!(pass.heads & kBackboneHead)) throw std::logic_error("backward: backbone head not in forward");
    check_grad_shape(grads.backbone_logits, n, shape.num_classes, "backbone logits");
    affine_backward(model.backbone_head(), pass.repr, grads.backbone_logits,
                    !model.is_frozen(ParamGroup::backbone_head), &d_repr);
  }
  if (!grads.aux_logits.empty()) {
    if (!(pass.heads & kAuxHead)) throw std::logic_error("backward: aux head not in forward");
    check_grad_shape(grads.aux_logits, n, shape.num_classes, "aux logits");
    affine_backward(model.aux_head(), pass.repr, grads.aux_logits,
                    !model.is_frozen(ParamGroup::aux_head), &d_repr);
  }
  if (!grads.features.empty()) {
    if (!(pass.heads & kProjection)) throw std::logic_error("backward: projection not in forward");
    check_grad_shape(grads.features, n, shape.feature_dim(), "features");
    if (shape.projection == ProjectionMode::identity) {
      if (d_repr.empty()) {
        d_repr = grads.features;
      } else {
        auto out = d_repr.values();
        const auto in = grads.features.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
      }
    } else {
      Tensor2D d_pre = grads.features;
      if (shape.projection == ProjectionMode::nonlinear) {
        auto d = d_pre.values();
        const auto pre = pass.proj_pre.values();
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (pre[i] <= 0.0) d[i] = 0.0;
        }
      }
      affine_backward(*model.projector(), pass.repr, d_pre,
                      !model.is_frozen(ParamGroup::projector), &d_repr);
    }
  }

  if (d_repr.empty() || model.is_frozen(ParamGroup::extractor)) return;

  Tensor2D d_out = std::move(d_repr);
  auto& layers = model.extractor();
  for (std::size_t li = layers.size(); li-- > 0;) {
    auto d = d_out.values();
    const auto pre = pass.layer_pre[li].values();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (pre[i] <= 0.0) d[i] = 0.0;
    }
    Tensor2D d_in;
    affine_backward(layers[li], pass.layer_inputs[li], d_out, true, li > 0 ? &d_in : nullptr);
    d_out = std::move(d_in);
  }
}

void sgd_step(CisslModel& model, double lr, const SgdOptions& options) {
  auto params = model.parameters();
  for (const auto& p : params) {
    if (!p.param->grad.all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  for (auto& p : params) {
    if (!model.is_frozen(p.group)) {
      auto theta = p.param->value.values();
      auto g = p.param->grad.values();
      if (options.momentum != 0.0) {
        if (p.param->velocity.empty()) {
          p.param->velocity = Tensor2D(p.param->value.rows(), p.param->value.cols());
        }
        auto v = p.param->velocity.values();
        for (std::size_t i = 0; i < theta.size(); ++i) {
          v[i] = options.momentum * v[i] + g[i] + options.weight_decay * theta[i];
          theta[i] -= lr * v[i];
        }
      } else {
        for (std::size_t i = 0; i < theta.size(); ++i) {
          theta[i] -= lr * (g[i] + options.weight_decay * theta[i]);
        }
      }
    }
    p.param->grad.fill(0.0);
  }
}

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<const Tensor2D*>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write("CSSL", 4);
  write_u32(os, kSnapshotVersion);
  for (const Tensor2D* t : tensors) {
    write_u32(os, static_cast<std::uint32_t>(t->rows()));
    write_u32(os, static_cast<std::uint32_t>(t->cols()));
    for (double v : t->values()) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<Tensor2D> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSSL", 4) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a CSSL snapshot");
  }
  std::uint32_t version = 0;
  if (!read_u32(is, version) || version != kSnapshotVersion) {
    throw std::runtime_error("'" + path.string() + "': unsupported snapshot version");
  }
  std::vector<Tensor2D> out;
  std::uint32_t rows = 0;
  while (read_u32(is, rows)) {
    std::uint32_t cols = 0;
    if (!read_u32(is, cols)) throw std::runtime_error("snapshot: truncated tensor header");
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (auto& v : data) v = read_f64(is);
    out.emplace_back(rows, cols, std::move(data));
  }
  return out;
}

void save_parameters(const CisslModel& model, const std::filesystem::path& path) {
  std::vector<const Tensor2D*> tensors;
  for (const auto& p : model.parameters()) tensors.push_back(&p.param->value);
  write_tensor_file(path, tensors);
}

void load_parameters(CisslModel& model, const std::filesystem::path& path) {
  auto tensors = read_tensor_file(path);
  auto params = model.parameters();
  if (tensors.size() != params.size()) {
    throw std::runtime_error("snapshot '" + path.string() + "' holds " +
                             std::to_string(tensors.size()) + " tensors, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& cur = params[i].param->value;
    if (tensors[i].rows() != cur.rows() || tensors[i].cols() != cur.cols()) {
      throw std::runtime_error("snapshot shape mismatch for '" + params[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = std::move(tensors[i]);
}

}  // namespace cissl
