#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmax/matrix.hpp"
#include "bmax/rng.hpp"

namespace bmax {

enum class Act { Tanh, Relu, Identity };

std::string act_name(Act a);
Act act_from_name(const std::string& name);

// Fully-connected network parameters. The flat index space is canonical:
// layer by layer, weights row-major (out, in) then bias, and is what
// checkpoints, gradients and subnetwork indices refer to.
struct MlpParams {
  std::vector<int> widths;      // [input, hidden..., output]
  std::vector<Act> acts;        // one per weight layer; output layer Identity
  std::vector<Matrix> weights;  // (out x in)
  std::vector<Vector> biases;

  int layers() const { return static_cast<int>(weights.size()); }
  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  std::size_t param_count() const;

  Vector flatten() const;
  void set_flat(const Vector& flat);
  double get_flat(std::size_t idx) const;
  void add_flat(std::size_t idx, double delta);

  static MlpParams zeros(const std::vector<int>& widths, const std::vector<Act>& acts);
  // Xavier-style normal init, biases zero
  static MlpParams random_init(const std::vector<int>& widths, const std::vector<Act>& acts,
                               RngStream& rng);
};

// Locates a flat index inside the layer structure.
struct FlatIndex {
  int layer = 0;
  bool bias = false;
  int out = 0;
  int in = 0;  // unused for bias entries
};
FlatIndex decompose_flat_index(const MlpParams& p, std::size_t idx);

// Per-unit multiplier applied to the post-activation output of hidden
// layer `layer` (0-based weight-layer index). Inverted-dropout masks put
// the 1/(1-p) rescale directly in `scale`.
struct DropoutMask {
  int layer = 0;
  Vector scale;
};

// Forward pass; rows of x are independent samples.
Matrix mlp_apply(const MlpParams& p, const Matrix& x, const DropoutMask* mask = nullptr);

// Forward pass keeping intermediate activations for backprop.
// h[0] = input, h[l+1] = post-mask output of layer l; a[l] = pre-mask.
struct MlpTrace {
  std::vector<Matrix> h;
  std::vector<Matrix> a;
};
MlpTrace mlp_forward_trace(const MlpParams& p, const Matrix& x, const DropoutMask* mask = nullptr);

// Reverse-mode gradient of sum(upstream .* f(x)) wrt parameters, flat.
Vector mlp_grads(const MlpParams& p, const Matrix& x, const Matrix& upstream,
                 const DropoutMask* mask = nullptr);
Vector mlp_grads_from_trace(const MlpParams& p, const MlpTrace& trace, const Matrix& upstream,
                            const DropoutMask* mask = nullptr);

// Pre-activation sensitivities per layer (batched), for per-row Jacobian
// extraction: deltas[l](r, o) = d upstream_r / d z_l(r, o).
std::vector<Matrix> mlp_backward_deltas(const MlpParams& p, const MlpTrace& trace,
                                        const Matrix& upstream, const DropoutMask* mask = nullptr);

// Checkpoint file: one JSON header line (widths, activation tags, count,
// plus caller extras), then the flat parameters as little-endian 64-bit
// floats in canonical order.
void save_checkpoint(const std::string& path, const MlpParams& p,
                     const std::string& extra_json = "{}");
struct Checkpoint {
  MlpParams params;
  std::string extra_json;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bmax
