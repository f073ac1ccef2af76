#include "engine.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpx/error.hpp"
#include "hash.hpp"

namespace fpx::engine {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

UnitSpec unit(std::string name, int cin, int cout, int kh, int kw, int stride = 1) {
  return {std::move(name), ConvGeom{cin, cout, kh, kw, stride, kh / 2, kw / 2}};
}

}  // namespace

std::vector<StageSpec> backbone_layout(const ModelConfig& config) {
  std::vector<StageSpec> stages;
  const int s = config.stem_channels;
  stages.push_back({StageSpec::Kind::Conv, "stem1", {unit("stem.conv1", 1, s, 3, 3, 2)}});
  stages.push_back({StageSpec::Kind::Conv, "stem2", {unit("stem.conv2", s, s, 3, 3, 2)}});
  int channels = s;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const auto& b = config.blocks[i];
    const std::string n = "block" + std::to_string(i + 1);
    stages.push_back({StageSpec::Kind::Inception,
                      n,
                      {
                          unit(n + ".b1", channels, b.branch1x1, 1, 1),
                          unit(n + ".b2a", channels, b.factorized_reduce, 1, 1),
                          unit(n + ".b2b", b.factorized_reduce, b.factorized_out, 1, 3),
                          unit(n + ".b2c", b.factorized_out, b.factorized_out, 3, 1),
                          unit(n + ".b3a", channels, b.double_reduce, 1, 1),
                          unit(n + ".b3b", b.double_reduce, b.double_out, 3, 3),
                          unit(n + ".b3c", b.double_out, b.double_out, 3, 3),
                          unit(n + ".b4", channels, b.pool_proj, 1, 1),
                      }});
    channels = b.out_channels();
    if (b.downsample_after) stages.push_back({StageSpec::Kind::MaxPool, "pool" + std::to_string(i + 1), {}});
  }
  stages.push_back({StageSpec::Kind::Conv, "embed", {unit("embed", channels, config.embedding_dim, 1, 1)}});
  return stages;
}

template <class T>
struct Context {
  std::vector<std::vector<T>> values;  // parallel to Model::backbone
  std::vector<std::vector<T>> grads;
  std::map<std::string, std::size_t> index;
  bool batch_statistics = false;
  bool param_grads = false;
  T eps = T(1e-3);
  std::map<std::string, BatchNormStats> stats;
  // When set, every ReLU on/off decision and max-pool winner is folded in.
  bool track_pattern = false;
  Fnv1a64 pattern;

  std::size_t at(const std::string& name) const {
    const auto it = index.find(name);
    check(it != index.end(), ErrorCode::ConfigError, "model lacks parameter " + name);
    return it->second;
  }
};

namespace {

template <class T>
void im2col(const Act<T>& x, const ConvGeom& g, int oh, int ow, std::vector<T>& cols) {
  const std::size_t n = static_cast<std::size_t>(x.b) * oh * ow;
  cols.assign(static_cast<std::size_t>(g.cin) * g.kh * g.kw * n, T(0));
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols.data() + (static_cast<std::size_t>(ci * g.kh + ky) * g.kw + kx) * n;
        for (int bi = 0; bi < x.b; ++bi) {
          const T* plane = x.v.data() + (static_cast<std::size_t>(ci) * x.b + bi) * x.h * x.w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride + ky - g.ph;
            T* dst = row + (static_cast<std::size_t>(bi) * oh + oy) * ow;
            if (iy < 0 || iy >= x.h) continue;
            const T* src_row = plane + static_cast<std::size_t>(iy) * x.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride + kx - g.pw;
              if (ix >= 0 && ix < x.w) dst[ox] = src_row[ix];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const std::vector<T>& cols, const ConvGeom& g, int oh, int ow, Act<T>& dx) {
  const std::size_t n = static_cast<std::size_t>(dx.b) * oh * ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols.data() + (static_cast<std::size_t>(ci * g.kh + ky) * g.kw + kx) * n;
        for (int bi = 0; bi < dx.b; ++bi) {
          T* plane = dx.v.data() + (static_cast<std::size_t>(ci) * dx.b + bi) * dx.h * dx.w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride + ky - g.ph;
            if (iy < 0 || iy >= dx.h) continue;
            const T* src = row + (static_cast<std::size_t>(bi) * oh + oy) * ow;
            T* dst_row = plane + static_cast<std::size_t>(iy) * dx.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride + kx - g.pw;
              if (ix >= 0 && ix < dx.w) dst_row[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

// conv (no bias) -> batch norm -> ReLU
template <class T>
class ConvUnit {
 public:
  ConvUnit(const UnitSpec& spec, const Context<T>& ctx)
      : name_(spec.name),
        g_(spec.geom),
        w_(ctx.at(spec.name + ".weight")),
        gamma_(ctx.at(spec.name + ".bn.gamma")),
        beta_(ctx.at(spec.name + ".bn.beta")),
        mean_(ctx.at(spec.name + ".bn.running_mean")),
        var_(ctx.at(spec.name + ".bn.running_var")) {}

  ActPtr<T> forward(ActPtr<T> in, Context<T>& ctx) {
    check(in->c == g_.cin, ErrorCode::ShapeMismatch, name_ + ": channel mismatch");
    input_ = in;
    const int oh = g_.out_h(in->h);
    const int ow = g_.out_w(in->w);
    check(oh >= 1 && ow >= 1, ErrorCode::ShapeMismatch, name_ + ": input too small");
    auto out = std::make_shared<Act<T>>(g_.cout, in->b, oh, ow);
    const auto n = static_cast<Eigen::Index>(out->plane());
    const auto k = static_cast<Eigen::Index>(g_.cin) * g_.kh * g_.kw;
    ConstMapMat<T> wmat(ctx.values[w_].data(), g_.cout, k);
    MapMat<T> z(out->v.data(), g_.cout, n);
    if (g_.pointwise()) {
      z.noalias() = wmat * ConstMapMat<T>(in->v.data(), k, n);
    } else {
      std::vector<T> cols;
      im2col(*in, g_, oh, ow, cols);
      z.noalias() = wmat * ConstMapMat<T>(cols.data(), k, n);
    }

    const auto& gamma = ctx.values[gamma_];
    const auto& beta = ctx.values[beta_];
    xhat_.resize(out->v.size());
    inv_std_.resize(g_.cout);
    std::vector<double> batch_mean(g_.cout), batch_var(g_.cout);
    for (int c = 0; c < g_.cout; ++c) {
      T* row = out->v.data() + static_cast<std::size_t>(c) * n;
      T mean;
      T var;
      if (ctx.batch_statistics) {
        T sum = 0;
        for (Eigen::Index i = 0; i < n; ++i) sum += row[i];
        mean = sum / static_cast<T>(n);
        T sq = 0;
        for (Eigen::Index i = 0; i < n; ++i) sq += (row[i] - mean) * (row[i] - mean);
        var = sq / static_cast<T>(n);
        batch_mean[c] = static_cast<double>(mean);
        batch_var[c] = n > 1 ? static_cast<double>(sq) / static_cast<double>(n - 1) : 0.0;
      } else {
        mean = ctx.values[mean_][c];
        var = ctx.values[var_][c];
      }
      const T inv = T(1) / std::sqrt(var + ctx.eps);
      inv_std_[c] = inv;
      T* xh = xhat_.data() + static_cast<std::size_t>(c) * n;
      for (Eigen::Index i = 0; i < n; ++i) {
        xh[i] = (row[i] - mean) * inv;
        const T y = gamma[c] * xh[i] + beta[c];
        row[i] = y > T(0) ? y : T(0);
      }
      if (ctx.track_pattern) {
        std::uint64_t word = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          word = (word << 1) | (row[i] > T(0) ? 1u : 0u);
          if ((i & 63) == 63 || i + 1 == n) {
            ctx.pattern.update_value(word);
            word = 0;
          }
        }
      }
    }
    if (ctx.batch_statistics) {
      ctx.stats[name_ + ".bn.running_mean"] = BatchNormStats{std::move(batch_mean), std::move(batch_var)};
    }
    output_ = out;
    return out;
  }

  // dout: gradient w.r.t. this unit's output (consumed). Returns the input gradient
  // when need_input is set, otherwise an empty Act.
  Act<T> backward(Act<T>&& dout, Context<T>& ctx, bool need_input) {
    const auto n = static_cast<Eigen::Index>(output_->plane());
    const auto k = static_cast<Eigen::Index>(g_.cin) * g_.kh * g_.kw;
    const auto& gamma = ctx.values[gamma_];
    // dout becomes dz in place.
    for (int c = 0; c < g_.cout; ++c) {
      T* d = dout.v.data() + static_cast<std::size_t>(c) * n;
      const T* y = output_->v.data() + static_cast<std::size_t>(c) * n;
      const T* xh = xhat_.data() + static_cast<std::size_t>(c) * n;
      T dgamma = 0;
      T dbeta = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (y[i] <= T(0)) d[i] = T(0);
        dgamma += d[i] * xh[i];
        dbeta += d[i];
      }
      const T scale = gamma[c] * inv_std_[c];
      if (ctx.batch_statistics) {
        const T inv_n = T(1) / static_cast<T>(n);
        for (Eigen::Index i = 0; i < n; ++i) d[i] = scale * (d[i] - inv_n * dbeta - xh[i] * inv_n * dgamma);
      } else {
        for (Eigen::Index i = 0; i < n; ++i) d[i] *= scale;
      }
      if (ctx.param_grads) {
        ctx.grads[gamma_][c] += dgamma;
        ctx.grads[beta_][c] += dbeta;
      }
    }
    ConstMapMat<T> dz(dout.v.data(), g_.cout, n);
    std::vector<T> cols;
    const T* cols_ptr = input_->v.data();
    if (!g_.pointwise() && ctx.param_grads) {
      im2col(*input_, g_, output_->h, output_->w, cols);
      cols_ptr = cols.data();
    }
    if (ctx.param_grads) {
      MapMat<T> gw(ctx.grads[w_].data(), g_.cout, k);
      gw.noalias() += dz * ConstMapMat<T>(cols_ptr, k, n).transpose();
    }
    if (!need_input) return {};
    Act<T> din(input_->c, input_->b, input_->h, input_->w);
    ConstMapMat<T> wmat(ctx.values[w_].data(), g_.cout, k);
    if (g_.pointwise()) {
      MapMat<T>(din.v.data(), k, n).noalias() = wmat.transpose() * dz;
    } else {
      std::vector<T> dcols(static_cast<std::size_t>(k) * n);
      MapMat<T>(dcols.data(), k, n).noalias() = wmat.transpose() * dz;
      col2im(dcols, g_, output_->h, output_->w, din);
    }
    return din;
  }

  int out_channels() const noexcept { return g_.cout; }

 private:
  std::string name_;
  ConvGeom g_;
  std::size_t w_, gamma_, beta_, mean_, var_;
  ActPtr<T> input_;
  ActPtr<T> output_;
  std::vector<T> xhat_;
  std::vector<T> inv_std_;
};

// 3x3, stride 1, pad 1, averaging over in-bounds taps only.
template <class T>
Act<T> avg_pool3(const Act<T>& x) {
  Act<T> out(x.c, x.b, x.h, x.w);
  for (std::size_t p = 0; p < static_cast<std::size_t>(x.c) * x.b; ++p) {
    const T* src = x.v.data() + p * x.h * x.w;
    T* dst = out.v.data() + p * x.h * x.w;
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) {
        T sum = 0;
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy;
            const int xc = xx + dx;
            if (yy < 0 || yy >= x.h || xc < 0 || xc >= x.w) continue;
            sum += src[yy * x.w + xc];
            ++count;
          }
        }
        dst[y * x.w + xx] = sum / static_cast<T>(count);
      }
    }
  }
  return out;
}

template <class T>
Act<T> avg_pool3_backward(const Act<T>& dout) {
  Act<T> din(dout.c, dout.b, dout.h, dout.w);
  for (std::size_t p = 0; p < static_cast<std::size_t>(dout.c) * dout.b; ++p) {
    const T* d = dout.v.data() + p * dout.h * dout.w;
    T* dst = din.v.data() + p * dout.h * dout.w;
    for (int y = 0; y < dout.h; ++y) {
      for (int xx = 0; xx < dout.w; ++xx) {
        const int ylo = std::max(0, y - 1), yhi = std::min(dout.h - 1, y + 1);
        const int xlo = std::max(0, xx - 1), xhi = std::min(dout.w - 1, xx + 1);
        const T share = d[y * dout.w + xx] / static_cast<T>((yhi - ylo + 1) * (xhi - xlo + 1));
        for (int yy = ylo; yy <= yhi; ++yy) {
          for (int xc = xlo; xc <= xhi; ++xc) dst[yy * dout.w + xc] += share;
        }
      }
    }
  }
  return din;
}

}  // namespace

template <class T>
class Stage {
 public:
  explicit Stage(std::string name) : name_(std::move(name)) {}
  virtual ~Stage() = default;
  virtual ActPtr<T> forward(ActPtr<T> in, Context<T>& ctx) = 0;
  virtual Act<T> backward(Act<T>&& dout, Context<T>& ctx, bool need_input) = 0;
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

namespace {

template <class T>
class ConvStage final : public Stage<T> {
 public:
  ConvStage(const StageSpec& spec, const Context<T>& ctx) : Stage<T>(spec.name), unit_(spec.units.at(0), ctx) {}
  ActPtr<T> forward(ActPtr<T> in, Context<T>& ctx) override { return unit_.forward(std::move(in), ctx); }
  Act<T> backward(Act<T>&& dout, Context<T>& ctx, bool need_input) override {
    return unit_.backward(std::move(dout), ctx, need_input);
  }

 private:
  ConvUnit<T> unit_;
};

template <class T>
class MaxPoolStage final : public Stage<T> {
 public:
  explicit MaxPoolStage(const StageSpec& spec) : Stage<T>(spec.name) {}

  // 3x3, stride 2, pad 1
  ActPtr<T> forward(ActPtr<T> in, Context<T>& ctx) override {
    in_shape_ = {in->c, in->b, in->h, in->w};
    const int oh = (in->h - 1) / 2 + 1;
    const int ow = (in->w - 1) / 2 + 1;
    auto out = std::make_shared<Act<T>>(in->c, in->b, oh, ow);
    argmax_.assign(out->v.size(), 0);
    for (std::size_t p = 0; p < static_cast<std::size_t>(in->c) * in->b; ++p) {
      const T* src = in->v.data() + p * in->h * in->w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::uint32_t best_i = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int y = 2 * oy + dy;
              const int x = 2 * ox + dx;
              if (y < 0 || y >= in->h || x < 0 || x >= in->w) continue;
              const T v = src[y * in->w + x];
              if (v > best) {
                best = v;
                best_i = static_cast<std::uint32_t>(y * in->w + x);
              }
            }
          }
          const std::size_t o = p * oh * ow + static_cast<std::size_t>(oy) * ow + ox;
          out->v[o] = best;
          argmax_[o] = best_i;
        }
      }
    }
    if (ctx.track_pattern) {
      for (auto i : argmax_) ctx.pattern.update_value(i);
    }
    return out;
  }

  Act<T> backward(Act<T>&& dout, Context<T>&, bool need_input) override {
    if (!need_input) return {};
    Act<T> din(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t in_plane = static_cast<std::size_t>(din.h) * din.w;
    const std::size_t out_plane = static_cast<std::size_t>(dout.h) * dout.w;
    for (std::size_t p = 0; p < static_cast<std::size_t>(din.c) * din.b; ++p) {
      for (std::size_t o = 0; o < out_plane; ++o) {
        din.v[p * in_plane + argmax_[p * out_plane + o]] += dout.v[p * out_plane + o];
      }
    }
    return din;
  }

 private:
  std::array<int, 4> in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

template <class T>
class InceptionStage final : public Stage<T> {
 public:
  InceptionStage(const StageSpec& spec, const Context<T>& ctx) : Stage<T>(spec.name) {
    for (const auto& u : spec.units) units_.emplace_back(u, ctx);
  }

  ActPtr<T> forward(ActPtr<T> in, Context<T>& ctx) override {
    auto& u = units_;
    auto b1 = u[0].forward(in, ctx);
    auto b2 = u[2].forward(u[1].forward(in, ctx), ctx);
    b2 = u[3].forward(b2, ctx);
    auto b3 = u[5].forward(u[4].forward(in, ctx), ctx);
    b3 = u[6].forward(b3, ctx);
    auto pooled = std::make_shared<Act<T>>(avg_pool3(*in));
    auto b4 = u[7].forward(pooled, ctx);

    const ActPtr<T> parts[] = {b1, b2, b3, b4};
    int channels = 0;
    for (const auto& p : parts) channels += p->c;
    auto out = std::make_shared<Act<T>>(channels, in->b, in->h, in->w);
    auto it = out->v.begin();
    for (const auto& p : parts) it = std::copy(p->v.begin(), p->v.end(), it);
    return out;
  }

  Act<T> backward(Act<T>&& dout, Context<T>& ctx, bool need_input) override {
    auto& u = units_;
    const std::size_t plane = dout.plane();
    std::size_t offset = 0;
    auto slice = [&](int channels) {
      Act<T> part(channels, dout.b, dout.h, dout.w);
      std::copy_n(dout.v.begin() + static_cast<std::ptrdiff_t>(offset * plane), part.v.size(), part.v.begin());
      offset += static_cast<std::size_t>(channels);
      return part;
    };
    Act<T> d1 = slice(u[0].out_channels());
    Act<T> d2 = slice(u[3].out_channels());
    Act<T> d3 = slice(u[6].out_channels());
    Act<T> d4 = slice(u[7].out_channels());

    Act<T> din;
    auto accumulate = [&](Act<T>&& part) {
      if (!need_input) return;
      if (din.v.empty()) {
        din = std::move(part);
      } else {
        for (std::size_t i = 0; i < din.v.size(); ++i) din.v[i] += part.v[i];
      }
    };
    accumulate(u[0].backward(std::move(d1), ctx, need_input));
    accumulate(u[1].backward(u[2].backward(u[3].backward(std::move(d2), ctx, true), ctx, true), ctx, need_input));
    accumulate(u[4].backward(u[5].backward(u[6].backward(std::move(d3), ctx, true), ctx, true), ctx, need_input));
    Act<T> dpool = u[7].backward(std::move(d4), ctx, need_input);
    if (need_input) accumulate(avg_pool3_backward(dpool));
    return din;
  }

 private:
  std::vector<ConvUnit<T>> units_;
};

}  // namespace

template <class T>
Executor<T>::Executor(const Model& model, bool batch_statistics, bool param_grads)
    : model_(model), ctx_(std::make_unique<Context<T>>()) {
  auto& ctx = *ctx_;
  ctx.batch_statistics = batch_statistics;
  ctx.param_grads = param_grads;
  ctx.eps = static_cast<T>(model.config.bn_epsilon);
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    const auto& p = model.backbone[i];
    ctx.index[p.name] = i;
    ctx.values.emplace_back(p.values.begin(), p.values.end());
    ctx.grads.emplace_back(param_grads && p.trainable ? p.values.size() : 0, T(0));
  }
  for (const auto& spec : backbone_layout(model.config)) {
    switch (spec.kind) {
      case StageSpec::Kind::Conv: stages_.push_back(std::make_unique<ConvStage<T>>(spec, ctx)); break;
      case StageSpec::Kind::Inception: stages_.push_back(std::make_unique<InceptionStage<T>>(spec, ctx)); break;
      case StageSpec::Kind::MaxPool: stages_.push_back(std::make_unique<MaxPoolStage<T>>(spec)); break;
    }
  }
}

template <class T>
Executor<T>::~Executor() = default;

template <class T>
void Executor<T>::track_pattern(bool on) {
  ctx_->track_pattern = on;
}

template <class T>
std::uint64_t Executor<T>::activation_pattern() const {
  return ctx_->pattern.digest();
}

template <class T>
const std::vector<T>& Executor<T>::forward(const Tensor& batch) {
  const auto& cfg = model_.config;
  check(batch.shape.size() == 4 && batch.shape[1] == 1 && batch.shape[2] == cfg.input_height &&
            batch.shape[3] == cfg.input_width && batch.shape[0] >= 1,
        ErrorCode::ShapeMismatch,
        "batch must be (B, 1, " + std::to_string(cfg.input_height) + ", " + std::to_string(cfg.input_width) + ")");
  check(batch.values.size() == shape_size(batch.shape), ErrorCode::ShapeMismatch, "batch values/shape mismatch");
  batch_ = batch.shape[0];
  auto x = std::make_shared<Act<T>>(1, batch_, cfg.input_height, cfg.input_width);
  std::transform(batch.values.begin(), batch.values.end(), x->v.begin(), [](double v) { return static_cast<T>(v); });

  outputs_.clear();
  ctx_->stats.clear();
  ctx_->pattern = Fnv1a64{};
  ActPtr<T> cur = x;
  for (auto& stage : stages_) {
    cur = stage->forward(cur, *ctx_);
    outputs_.push_back(cur);
  }
  const std::size_t hw = static_cast<std::size_t>(cur->h) * cur->w;
  embedding_.assign(static_cast<std::size_t>(batch_) * cur->c, T(0));
  for (int c = 0; c < cur->c; ++c) {
    for (int b = 0; b < batch_; ++b) {
      const T* p = cur->v.data() + (static_cast<std::size_t>(c) * batch_ + b) * hw;
      T sum = 0;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      embedding_[static_cast<std::size_t>(b) * cur->c + c] = sum / static_cast<T>(hw);
    }
  }
  return embedding_;
}

namespace {

const TaskHead& head_for(const Model& model, Task task) {
  const auto it = model.heads.find(task);
  check(it != model.heads.end(), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  return it->second;
}

bool collapsed(const Model& model, Task task) {
  return task == Task::Fakeness && model.config.fakeness_from_alteration;
}

template <class T>
std::vector<T> dense(const std::vector<T>& emb, int batch, const TaskHead& head) {
  const int e = head.weight.shape[0];
  const int c = head.weight.shape[1];
  std::vector<T> out(static_cast<std::size_t>(batch) * c);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < c; ++k) {
      T acc = static_cast<T>(head.bias.values[k]);
      for (int j = 0; j < e; ++j) {
        acc += emb[static_cast<std::size_t>(b) * e + j] * static_cast<T>(head.weight.values[static_cast<std::size_t>(j) * c + k]);
      }
      out[static_cast<std::size_t>(b) * c + k] = acc;
    }
  }
  return out;
}

constexpr int kRealAlterationClass = 3;

}  // namespace

template <class T>
std::vector<T> Executor<T>::logits(Task task) {
  if (!collapsed(model_, task)) return dense(embedding_, batch_, head_for(model_, task));
  // Real vs. rest from the alteration head, as log-probabilities {Altered, Real}.
  const auto z = dense(embedding_, batch_, head_for(model_, Task::Alteration));
  std::vector<T> out(static_cast<std::size_t>(batch_) * 2);
  for (int b = 0; b < batch_; ++b) {
    const T* row = z.data() + static_cast<std::size_t>(b) * 4;
    const T m = *std::max_element(row, row + 4);
    T all = 0;
    T altered = 0;
    for (int k = 0; k < 4; ++k) {
      all += std::exp(row[k] - m);
      if (k != kRealAlterationClass) altered += std::exp(row[k] - m);
    }
    out[static_cast<std::size_t>(b) * 2] = std::log(altered) - std::log(all);
    out[static_cast<std::size_t>(b) * 2 + 1] = row[kRealAlterationClass] - m - std::log(all);
  }
  return out;
}

template <class T>
void Executor<T>::backward(Task task, const std::vector<T>& d_logits_in, std::string_view capture) {
  Task head_task = task;
  std::vector<T> d_logits = d_logits_in;
  if (collapsed(model_, task)) {
    head_task = Task::Alteration;
    const auto z = dense(embedding_, batch_, head_for(model_, Task::Alteration));
    std::vector<T> dz(static_cast<std::size_t>(batch_) * 4);
    for (int b = 0; b < batch_; ++b) {
      const T* row = z.data() + static_cast<std::size_t>(b) * 4;
      const T m = *std::max_element(row, row + 4);
      T all = 0;
      T altered = 0;
      std::array<T, 4> e{};
      for (int k = 0; k < 4; ++k) {
        e[k] = std::exp(row[k] - m);
        all += e[k];
        if (k != kRealAlterationClass) altered += e[k];
      }
      const T g_alt = d_logits_in[static_cast<std::size_t>(b) * 2];
      const T g_real = d_logits_in[static_cast<std::size_t>(b) * 2 + 1];
      for (int k = 0; k < 4; ++k) {
        const T p = e[k] / all;
        const T d_alt = (k != kRealAlterationClass ? e[k] / altered : T(0)) - p;
        const T d_real = (k == kRealAlterationClass ? T(1) : T(0)) - p;
        dz[static_cast<std::size_t>(b) * 4 + k] = g_alt * d_alt + g_real * d_real;
      }
    }
    d_logits = std::move(dz);
  }

  const auto& head = head_for(model_, head_task);
  const int e = head.weight.shape[0];
  const int c = head.weight.shape[1];
  auto& gw = head_w_grad_[head_task];
  auto& gb = head_b_grad_[head_task];
  gw.resize(static_cast<std::size_t>(e) * c, T(0));
  gb.resize(static_cast<std::size_t>(c), T(0));
  std::vector<T> d_emb(static_cast<std::size_t>(batch_) * e, T(0));
  for (int b = 0; b < batch_; ++b) {
    for (int k = 0; k < c; ++k) {
      const T d = d_logits[static_cast<std::size_t>(b) * c + k];
      gb[k] += d;
      for (int j = 0; j < e; ++j) {
        gw[static_cast<std::size_t>(j) * c + k] += embedding_[static_cast<std::size_t>(b) * e + j] * d;
        d_emb[static_cast<std::size_t>(b) * e + j] +=
            d * static_cast<T>(head.weight.values[static_cast<std::size_t>(j) * c + k]);
      }
    }
  }

  const bool backbone = ctx_->param_grads;
  if (!backbone && capture.empty()) return;

  const auto& last = *outputs_.back();
  const std::size_t hw = static_cast<std::size_t>(last.h) * last.w;
  Act<T> d(last.c, last.b, last.h, last.w);
  for (int ch = 0; ch < last.c; ++ch) {
    for (int b = 0; b < batch_; ++b) {
      const T g = d_emb[static_cast<std::size_t>(b) * e + ch] / static_cast<T>(hw);
      std::fill_n(d.v.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(ch) * batch_ + b) * hw), hw, g);
    }
  }
  bool found = capture.empty();
  for (std::size_t i = stages_.size(); i-- > 0;) {
    if (!capture.empty() && stages_[i]->name() == capture) {
      captured_ = d;
      found = true;
      if (!backbone) return;
    }
    const bool need_input = i > 0 && (backbone || !found);
    d = stages_[i]->backward(std::move(d), *ctx_, need_input);
    if (!need_input && !backbone) break;
  }
  check(found, ErrorCode::ShapeMismatch, "unknown layer '" + std::string(capture) + "'");
}

template <class T>
NamedTensors Executor<T>::gradients() const {
  NamedTensors out;
  if (ctx_->param_grads) {
    for (std::size_t i = 0; i < model_.backbone.size(); ++i) {
      const auto& p = model_.backbone[i];
      if (!p.trainable) continue;
      out[p.name] = Tensor(p.shape, std::vector<double>(ctx_->grads[i].begin(), ctx_->grads[i].end()));
    }
  }
  for (const auto& [task, g] : head_w_grad_) {
    const auto& head = head_for(model_, task);
    out[head.weight.name] = Tensor(head.weight.shape, std::vector<double>(g.begin(), g.end()));
    const auto& gb = head_b_grad_.at(task);
    out[head.bias.name] = Tensor(head.bias.shape, std::vector<double>(gb.begin(), gb.end()));
  }
  return out;
}

template <class T>
std::map<std::string, BatchNormStats> Executor<T>::batch_stats() const {
  return ctx_->stats;
}

template <class T>
const Act<T>& Executor<T>::stage_output(std::string_view name) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i]->name() == name) {
      check(i < outputs_.size(), ErrorCode::ShapeMismatch, "forward has not run");
      return *outputs_[i];
    }
  }
  fail(ErrorCode::ShapeMismatch, "unknown layer '" + std::string(name) + "'");
}

template class Executor<float>;
template class Executor<double>;

}  // namespace fpx::engine
