#include "chronokit/interpret.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "chronokit/resize.hpp"

namespace chronokit {

namespace {

// min-max onto [0,1]; constant input maps to zeros
void minmax_normalize(double* v, std::size_t n) {
  double mn = v[0], mx = v[0];
  for (std::size_t i = 1; i < n; ++i) {
    mn = std::min(mn, v[i]);
    mx = std::max(mx, v[i]);
  }
  if (mx == mn) {
    std::fill(v, v + n, 0.0);
    return;
  }
  const double inv = 1.0 / (mx - mn);
  for (std::size_t i = 0; i < n; ++i) v[i] = (v[i] - mn) * inv;
}

}  // namespace

Tensor normalized_class_weighting(const Tensor& a_j, double y) {
  Tensor z(a_j.shape());
  for (std::size_t i = 0; i < a_j.numel(); ++i) z[i] = y * a_j[i];
  minmax_normalize(z.data(), z.numel());
  return z;
}

Tensor class_activation_map(const Tensor& a, const std::vector<double>& w_c) {
  check_shape(a.rank() >= 2, "class_activation_map expects [C,...]");
  const std::size_t C = a.extent(0);
  check_shape(w_c.size() == C, "weight vector length must equal channel count");
  const std::size_t inner = a.numel() / C;
  Tensor out(a.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = a.data() + c * inner;
    double* dst = out.data() + c * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] = w_c[c] * src[i];
    minmax_normalize(dst, inner);
  }
  return out;
}

SaliencyVolume saliency_tube(const Tensor& a_last, const std::vector<double>& y_i,
                             double tau, std::size_t t_in, std::size_t h_in,
                             std::size_t w_in, std::size_t class_index) {
  check_shape(a_last.rank() == 4, "saliency_tube expects [C',T',H',W']");
  check_shape(tau >= 0.0, "tau must be nonnegative");
  const std::size_t C = a_last.extent(0);
  check_shape(y_i.size() == C, "class weight length must equal channel count");
  const std::size_t inner = a_last.numel() / C;

  // channel filter on weighted-activation maxima
  std::vector<double> ch_max(C);
  double global_max = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < C; ++c) {
    double m = -std::numeric_limits<double>::infinity();
    const double* src = a_last.data() + c * inner;
    for (std::size_t i = 0; i < inner; ++i) m = std::max(m, y_i[c] * src[i]);
    ch_max[c] = m;
    global_max = std::max(global_max, m);
  }
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < C; ++c) {
    if (tau == 0.0 || ch_max[c] >= tau * global_max) kept.push_back(c);
  }

  SaliencyVolume vol;
  vol.class_index = class_index;
  vol.tau = tau;
  if (kept.empty()) {
    vol.values = Tensor({t_in, h_in, w_in});
    vol.empty_after_threshold = true;
    return vol;
  }

  Tensor tube({a_last.extent(1), a_last.extent(2), a_last.extent(3)});
  std::vector<double> z(inner);
  for (std::size_t c : kept) {
    const double* src = a_last.data() + c * inner;
    for (std::size_t i = 0; i < inner; ++i) z[i] = y_i[c] * src[i];
    minmax_normalize(z.data(), inner);
    for (std::size_t i = 0; i < inner; ++i) tube[i] += z[i] * z[i];
  }
  minmax_normalize(tube.data(), tube.numel());
  Tensor up = spline3_resize(tube, t_in, h_in, w_in);
  // cubic interpolation can overshoot the data range
  for (std::size_t i = 0; i < up.numel(); ++i) up[i] = std::clamp(up[i], 0.0, 1.0);
  vol.values = std::move(up);
  return vol;
}

std::vector<double> channel_summaries(const Tensor& a_star) {
  check_shape(a_star.rank() >= 1, "empty tensor");
  const std::size_t C = a_star.extent(0);
  const std::size_t inner = a_star.numel() / C;
  std::vector<double> s(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = a_star.data() + c * inner;
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += src[i];
    s[c] = acc / static_cast<double>(inner);
  }
  return s;
}

std::vector<std::size_t> select_features(const std::vector<double>& summaries,
                                         double theta) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < summaries.size(); ++j) {
    // sigma(s - theta) > 1/2  <=>  s > theta
    if (summaries[j] > theta) out.push_back(j);
  }
  return out;
}

BackstepVectors backstep_layer(const Tensor& a_prev, const Tensor& kernels,
                               const std::vector<std::size_t>& selected) {
  check_shape(kernels.rank() == 5, "kernels must be [K,C,kt,kh,kw]");
  check_shape(a_prev.rank() >= 1 && a_prev.extent(0) == kernels.extent(1),
              "channel mismatch between kernels and previous activations");
  const std::size_t C = kernels.extent(1);
  const std::size_t kvol = kernels.extent(2) * kernels.extent(3) * kernels.extent(4);

  const std::vector<double> abar = channel_summaries(a_prev);

  BackstepVectors out;
  out.per_kernel.reserve(selected.size());
  out.layer_average.assign(C, 0.0);
  for (std::size_t k : selected) {
    check_shape(k < kernels.extent(0), "selected kernel index out of range");
    std::vector<double> v(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double* kw = kernels.data() + (k * C + c) * kvol;
      double acc = 0.0;
      for (std::size_t i = 0; i < kvol; ++i) acc += kw[i];
      const double kbar = acc / static_cast<double>(kvol);
      v[c] = abar[c] * kbar;
    }
    minmax_normalize(v.data(), v.size());
    for (std::size_t c = 0; c < C; ++c) out.layer_average[c] += v[c];
    out.per_kernel.push_back(std::move(v));
  }
  if (!selected.empty()) {
    const double inv = 1.0 / static_cast<double>(selected.size());
    for (double& v : out.layer_average) v *= inv;
  }
  return out;
}

Tensor inflate_grouped_kernel(const Tensor& weights, std::size_t groups) {
  check_shape(weights.rank() == 5, "kernel weights must be [K,Cg,kt,kh,kw]");
  check_shape(groups >= 1 && weights.extent(0) % groups == 0,
              "groups must divide the kernel count");
  if (groups == 1) return weights;
  const std::size_t K = weights.extent(0), Cg = weights.extent(1);
  const std::size_t kvol = weights.extent(2) * weights.extent(3) * weights.extent(4);
  const std::size_t C = Cg * groups;
  const std::size_t Kg = K / groups;
  Tensor full({K, C, weights.extent(2), weights.extent(3), weights.extent(4)});
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t g = k / Kg;
    for (std::size_t cg = 0; cg < Cg; ++cg) {
      const double* src = weights.data() + (k * Cg + cg) * kvol;
      double* dst = full.data() + (k * C + g * Cg + cg) * kvol;
      std::copy(src, src + kvol, dst);
    }
  }
  return full;
}

namespace {

Tensor ones_kernel(std::size_t channels) {
  return Tensor({channels, channels, 1, 1, 1}, 1.0);
}

}  // namespace

AdaptedBlock adapt_block(CfpBlockKind kind,
                         const std::vector<std::vector<Tensor>>& branch_kernels,
                         const std::vector<std::vector<Tensor>>& branch_activations,
                         std::size_t groups) {
  check_shape(!branch_kernels.empty() && branch_kernels.size() == branch_activations.size(),
              "adapt_block needs matching kernel/activation branches");
  AdaptedBlock out;
  switch (kind) {
    case CfpBlockKind::Plain:
      out.branch_kernels = branch_kernels;
      out.branch_activations = branch_activations;
      break;
    case CfpBlockKind::Grouped: {
      out.branch_activations = branch_activations;
      out.branch_kernels.resize(branch_kernels.size());
      for (std::size_t b = 0; b < branch_kernels.size(); ++b)
        for (const Tensor& k : branch_kernels[b])
          out.branch_kernels[b].push_back(inflate_grouped_kernel(k, groups));
      break;
    }
    case CfpBlockKind::Residual: {
      check_shape(branch_kernels.size() == 1, "residual adaptation expects the main path");
      out.branch_kernels = branch_kernels;
      out.branch_activations = branch_activations;
      const std::size_t depth = branch_kernels[0].size();
      const std::size_t c = branch_activations[0].front().extent(0);
      std::vector<Tensor> skip_k(depth, ones_kernel(c));
      std::vector<Tensor> skip_a(depth, branch_activations[0].front());
      out.branch_kernels.push_back(std::move(skip_k));
      out.branch_activations.push_back(std::move(skip_a));
      out.skip_passthrough = true;
      break;
    }
    case CfpBlockKind::Branched: {
      std::size_t max_depth = 0;
      for (const auto& b : branch_kernels) max_depth = std::max(max_depth, b.size());
      out.branch_kernels = branch_kernels;
      out.branch_activations = branch_activations;
      for (std::size_t b = 0; b < out.branch_kernels.size(); ++b) {
        const std::size_t c = out.branch_activations[b].front().extent(0);
        while (out.branch_kernels[b].size() < max_depth) {
          out.branch_kernels[b].push_back(ones_kernel(c));
          out.branch_activations[b].push_back(out.branch_activations[b].back());
        }
      }
      break;
    }
  }
  return out;
}

bool PyramidReport::same_structure(const PyramidReport& other) const {
  if (edges.size() != other.edges.size()) return false;
  auto round6 = [](double v) { return std::round(v * 1e6) / 1e6; };
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const PyramidEdge& a = edges[i];
    const PyramidEdge& b = other.edges[i];
    if (a.layer != b.layer || a.parent != b.parent || a.child != b.child)
      return false;
    if (round6(a.score) != round6(b.score)) return false;
  }
  return true;
}

PyramidReport backstep_traverse(const ActivationTrace& trace,
                                const std::vector<double>& class_weights_row,
                                const BackstepConfig& cfg) {
  check_shape(cfg.depth >= 1, "back-step depth must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  PyramidReport rep;
  // prediction-layer step: the weighting vector itself carries the
  // cross-channel signal (per-channel normalized maps all span [0,1])
  std::vector<double> top_scores = class_weights_row;
  minmax_normalize(top_scores.data(), top_scores.size());
  std::vector<std::size_t> frontier = select_features(top_scores, cfg.theta);
  rep.selected.push_back(frontier);
  for (std::size_t j : frontier)
    rep.edges.push_back({0, -1, j, top_scores[j]});

  std::size_t steps = cfg.depth - 1;
  if (steps > trace.stages.size()) {
    steps = trace.stages.size();
    rep.truncated = true;
  }

  for (std::size_t d = 1; d <= steps && !frontier.empty(); ++d) {
    const TraceStage& stage = trace.stages[trace.stages.size() - d];
    Tensor kernels = stage.groups > 1
                         ? inflate_grouped_kernel(stage.kernels, stage.groups)
                         : stage.kernels;
    const BackstepVectors vecs = backstep_layer(stage.input, kernels, frontier);

    std::set<std::size_t> next;
    if (cfg.mode == BackstepMode::FeatureWise) {
      for (std::size_t pi = 0; pi < frontier.size(); ++pi) {
        const auto children = select_features(vecs.per_kernel[pi], cfg.theta);
        for (std::size_t ch : children) {
          rep.edges.push_back({d, static_cast<long>(frontier[pi]), ch,
                               vecs.per_kernel[pi][ch]});
          next.insert(ch);
        }
      }
    } else {
      const auto children = select_features(vecs.layer_average, cfg.theta);
      for (std::size_t ch : children) {
        rep.edges.push_back({d, -1, ch, vecs.layer_average[ch]});
        next.insert(ch);
      }
    }

    if (stage.kind == CfpBlockKind::Residual) {
      // ones-surrogate skip: pass-through edges preserving indices
      const std::vector<double> abar = channel_summaries(stage.input);
      std::vector<double> norm = abar;
      minmax_normalize(norm.data(), norm.size());
      for (std::size_t k : frontier) {
        if (k >= norm.size()) continue;
        rep.edges.push_back({d, static_cast<long>(k), k, norm[k]});
        next.insert(k);
      }
    }

    frontier.assign(next.begin(), next.end());
    rep.selected.push_back(frontier);
  }

  rep.elapsed_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return rep;
}

void write_report(const std::string& path, const PyramidReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[64];
  for (const PyramidEdge& e : report.edges) {
    std::snprintf(buf, sizeof(buf), "%zu,%ld,%zu,%.6f", e.layer, e.parent, e.child,
                  e.score);
    os << buf << "\n";
  }
}

PyramidReport parse_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  PyramidReport rep;
  std::string line;
  std::size_t max_layer = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    PyramidEdge e;
    std::istringstream ls(line);
    char comma;
    ls >> e.layer >> comma >> e.parent >> comma >> e.child >> comma >> e.score;
    if (!ls) throw std::runtime_error("malformed report line: " + line);
    max_layer = std::max(max_layer, e.layer);
    rep.edges.push_back(e);
  }
  rep.selected.assign(max_layer + 1, {});
  std::vector<std::set<std::size_t>> sel(max_layer + 1);
  for (const PyramidEdge& e : rep.edges) sel[e.layer].insert(e.child);
  for (std::size_t l = 0; l <= max_layer; ++l)
    rep.selected[l].assign(sel[l].begin(), sel[l].end());
  return rep;
}

}  // namespace chronokit
