#include "bmax/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace bmax {

namespace {

void check_widths(const std::vector<int>& widths, const std::vector<Act>& acts) {
  if (widths.size() < 2) throw ShapeError("MlpParams: need at least input and output widths");
  if (acts.size() != widths.size() - 1) throw ShapeError("MlpParams: one activation per layer");
  for (int w : widths)
    if (w < 1) throw ShapeError("MlpParams: non-positive layer width");
}

void apply_activation(Matrix& z, Act act) {
  switch (act) {
    case Act::Tanh:
      for (double& v : z.data()) v = std::tanh(v);
      break;
    case Act::Relu:
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Act::Identity:
      break;
  }
}

// derivative from the post-activation value
double act_deriv(double a, Act act) {
  switch (act) {
    case Act::Tanh: return 1.0 - a * a;
    case Act::Relu: return a > 0.0 ? 1.0 : 0.0;
    case Act::Identity: return 1.0;
  }
  return 1.0;
}

void check_mask(const MlpParams& p, const DropoutMask* mask) {
  if (!mask) return;
  if (mask->layer < 0 || mask->layer >= p.layers() - 1)
    throw ShapeError("DropoutMask: layer index must name a hidden layer");
  if (static_cast<int>(mask->scale.size()) != p.widths[mask->layer + 1])
    throw ShapeError("DropoutMask: width mismatch with the designated layer");
}

}  // namespace

std::string act_name(Act a) {
  switch (a) {
    case Act::Tanh: return "tanh";
    case Act::Relu: return "relu";
    case Act::Identity: return "identity";
  }
  return "identity";
}

Act act_from_name(const std::string& name) {
  if (name == "tanh") return Act::Tanh;
  if (name == "relu") return Act::Relu;
  if (name == "identity") return Act::Identity;
  throw ConfigError("unknown activation: " + name);
}

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

Vector MlpParams::flatten() const {
  Vector flat;
  flat.reserve(param_count());
  for (int l = 0; l < layers(); ++l) {
    flat.insert(flat.end(), weights[l].data().begin(), weights[l].data().end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

void MlpParams::set_flat(const Vector& flat) {
  if (flat.size() != param_count()) throw ShapeError("set_flat: length mismatch");
  std::size_t off = 0;
  for (int l = 0; l < layers(); ++l) {
    std::copy(flat.begin() + off, flat.begin() + off + weights[l].size(),
              weights[l].data().begin());
    off += weights[l].size();
    std::copy(flat.begin() + off, flat.begin() + off + biases[l].size(), biases[l].begin());
    off += biases[l].size();
  }
}

FlatIndex decompose_flat_index(const MlpParams& p, std::size_t idx) {
  std::size_t off = 0;
  for (int l = 0; l < p.layers(); ++l) {
    const std::size_t nw = p.weights[l].size();
    if (idx < off + nw) {
      const std::size_t local = idx - off;
      const int in = p.weights[l].cols();
      return {l, false, static_cast<int>(local / in), static_cast<int>(local % in)};
    }
    off += nw;
    const std::size_t nb = p.biases[l].size();
    if (idx < off + nb) return {l, true, static_cast<int>(idx - off), 0};
    off += nb;
  }
  throw ShapeError("decompose_flat_index: index out of range");
}

double MlpParams::get_flat(std::size_t idx) const {
  const FlatIndex f = decompose_flat_index(*this, idx);
  return f.bias ? biases[f.layer][f.out] : weights[f.layer](f.out, f.in);
}

void MlpParams::add_flat(std::size_t idx, double delta) {
  const FlatIndex f = decompose_flat_index(*this, idx);
  if (f.bias)
    biases[f.layer][f.out] += delta;
  else
    weights[f.layer](f.out, f.in) += delta;
}

MlpParams MlpParams::zeros(const std::vector<int>& widths, const std::vector<Act>& acts) {
  check_widths(widths, acts);
  MlpParams p;
  p.widths = widths;
  p.acts = acts;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.weights.emplace_back(widths[l + 1], widths[l]);
    p.biases.emplace_back(widths[l + 1], 0.0);
  }
  return p;
}

MlpParams MlpParams::random_init(const std::vector<int>& widths, const std::vector<Act>& acts,
                                 RngStream& rng) {
  MlpParams p = zeros(widths, acts);
  for (int l = 0; l < p.layers(); ++l) {
    const double std = std::sqrt(2.0 / (p.widths[l] + p.widths[l + 1]));
    for (double& w : p.weights[l].data()) w = std * rng.normal();
  }
  return p;
}

Matrix mlp_apply(const MlpParams& p, const Matrix& x, const DropoutMask* mask) {
  if (x.cols() != p.input_width()) throw ShapeError("mlp_apply: input width mismatch");
  check_mask(p, mask);
  Matrix h = x;
  for (int l = 0; l < p.layers(); ++l) {
    Matrix z = matmul_nt(h, p.weights[l]);
    for (int r = 0; r < z.rows(); ++r) {
      double* zr = z.row(r);
      for (int c = 0; c < z.cols(); ++c) zr[c] += p.biases[l][c];
    }
    apply_activation(z, p.acts[l]);
    if (mask && mask->layer == l)
      for (int r = 0; r < z.rows(); ++r) {
        double* zr = z.row(r);
        for (int c = 0; c < z.cols(); ++c) zr[c] *= mask->scale[c];
      }
    h = std::move(z);
  }
  return h;
}

MlpTrace mlp_forward_trace(const MlpParams& p, const Matrix& x, const DropoutMask* mask) {
  if (x.cols() != p.input_width()) throw ShapeError("mlp_forward_trace: input width mismatch");
  check_mask(p, mask);
  MlpTrace t;
  t.h.push_back(x);
  for (int l = 0; l < p.layers(); ++l) {
    Matrix z = matmul_nt(t.h.back(), p.weights[l]);
    for (int r = 0; r < z.rows(); ++r) {
      double* zr = z.row(r);
      for (int c = 0; c < z.cols(); ++c) zr[c] += p.biases[l][c];
    }
    apply_activation(z, p.acts[l]);
    t.a.push_back(z);
    if (mask && mask->layer == l)
      for (int r = 0; r < z.rows(); ++r) {
        double* zr = z.row(r);
        for (int c = 0; c < z.cols(); ++c) zr[c] *= mask->scale[c];
      }
    t.h.push_back(std::move(z));
  }
  return t;
}

std::vector<Matrix> mlp_backward_deltas(const MlpParams& p, const MlpTrace& trace,
                                        const Matrix& upstream, const DropoutMask* mask) {
  if (!upstream.same_shape(trace.h.back()))
    throw ShapeError("mlp_backward_deltas: upstream shape mismatch");
  check_mask(p, mask);
  std::vector<Matrix> deltas(p.layers());
  Matrix grad_h = upstream;
  for (int l = p.layers() - 1; l >= 0; --l) {
    if (mask && mask->layer == l)
      for (int r = 0; r < grad_h.rows(); ++r) {
        double* gr = grad_h.row(r);
        for (int c = 0; c < grad_h.cols(); ++c) gr[c] *= mask->scale[c];
      }
    Matrix delta = std::move(grad_h);
    const Matrix& a = trace.a[l];
    for (int r = 0; r < delta.rows(); ++r) {
      double* dr = delta.row(r);
      const double* ar = a.row(r);
      for (int c = 0; c < delta.cols(); ++c) dr[c] *= act_deriv(ar[c], p.acts[l]);
    }
    if (l > 0) grad_h = matmul(delta, p.weights[l]);
    deltas[l] = std::move(delta);
  }
  return deltas;
}

Vector mlp_grads_from_trace(const MlpParams& p, const MlpTrace& trace, const Matrix& upstream,
                            const DropoutMask* mask) {
  const std::vector<Matrix> deltas = mlp_backward_deltas(p, trace, upstream, mask);
  Vector flat;
  flat.reserve(p.param_count());
  for (int l = 0; l < p.layers(); ++l) {
    const Matrix gw = matmul_tn(deltas[l], trace.h[l]);  // (out x in)
    flat.insert(flat.end(), gw.data().begin(), gw.data().end());
    Vector gb(p.widths[l + 1], 0.0);
    for (int r = 0; r < deltas[l].rows(); ++r) {
      const double* dr = deltas[l].row(r);
      for (int c = 0; c < deltas[l].cols(); ++c) gb[c] += dr[c];
    }
    flat.insert(flat.end(), gb.begin(), gb.end());
  }
  return flat;
}

Vector mlp_grads(const MlpParams& p, const Matrix& x, const Matrix& upstream,
                 const DropoutMask* mask) {
  return mlp_grads_from_trace(p, mlp_forward_trace(p, x, mask), upstream, mask);
}

namespace {

void write_f64_le(std::ofstream& out, const Vector& v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpParams& p, const std::string& extra_json) {
  nlohmann::json header = nlohmann::json::parse(extra_json);
  header["widths"] = p.widths;
  std::vector<std::string> acts;
  for (Act a : p.acts) acts.push_back(act_name(a));
  header["acts"] = acts;
  header["count"] = p.param_count();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << header.dump() << "\n";
  write_f64_le(out, p.flatten());
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json header = nlohmann::json::parse(line);
  std::vector<int> widths = header.at("widths").get<std::vector<int>>();
  std::vector<Act> acts;
  for (const auto& name : header.at("acts")) acts.push_back(act_from_name(name));
  Checkpoint ck;
  ck.params = MlpParams::zeros(widths, acts);
  const std::size_t count = header.at("count").get<std::size_t>();
  if (count != ck.params.param_count())
    throw std::runtime_error("load_checkpoint: count disagrees with widths");
  Vector flat(count);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw std::runtime_error("load_checkpoint: truncated payload");
  ck.params.set_flat(flat);
  header.erase("widths");
  header.erase("acts");
  header.erase("count");
  ck.extra_json = header.dump();
  return ck;
}

}  // namespace bmax
