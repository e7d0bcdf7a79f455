#include "scone/score_model.hpp"

#include "scone/binary_io.hpp"
#include "scone/error.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace scone {

SdeSchedule::SdeSchedule(double sigma_min, double sigma_max, int total_steps, int sampling_steps)
    : sigma_min_(sigma_min),
      sigma_max_(sigma_max),
      total_steps_(total_steps),
      sampling_steps_(sampling_steps) {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw ConfigError("noise schedule needs 0 < sigma_min < sigma_max");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (sampling_steps < 0 || sampling_steps > total_steps)
    throw ConfigError("sampling_steps must lie in [0, total_steps]");
  grid_.resize(static_cast<std::size_t>(total_steps) + 1);
  for (int i = 0; i <= total_steps; ++i) grid_[i] = sigma(static_cast<double>(i) / total_steps);
}

double SdeSchedule::sigma(double t) const {
  return sigma_min_ * std::pow(sigma_max_ / sigma_min_, t);
}

double SdeSchedule::sigma_at(int step) const {
  if (step < 0 || step > total_steps_)
    throw std::out_of_range("schedule step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps_) + "]");
  return grid_[static_cast<std::size_t>(step)];
}

double SdeSchedule::perturb_variance(int step) const {
  const double s = sigma_at(step);
  return s * s - sigma_min_ * sigma_min_;
}

double SdeSchedule::step_variance(int step) const {
  const double hi = sigma_at(step + 1);
  const double lo = sigma_at(step);
  return hi * hi - lo * lo;
}

RowMatrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix z(rows, cols);
  for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = normal(rng);
  return z;
}

RowMatrix perturb(const RowMatrix& e0, const SdeSchedule& schedule, int step,
                  const RowMatrix& noise) {
  return e0 + std::sqrt(schedule.perturb_variance(step)) * noise;
}

RowMatrix perturb(const RowMatrix& e0, const SdeSchedule& schedule, int step, Rng& rng) {
  return perturb(e0, schedule, step, standard_normal(e0.rows(), e0.cols(), rng));
}

RowVector sinusoidal_embedding(double x, int dim) {
  RowVector out(dim);
  for (int k = 0; 2 * k < dim; ++k) {
    const double omega = std::pow(10000.0, -2.0 * k / dim);
    out[2 * k] = std::sin(x * omega);
    if (2 * k + 1 < dim) out[2 * k + 1] = std::cos(x * omega);
  }
  return out;
}

std::string_view layer_name(Layer layer) {
  static constexpr std::array<std::string_view, kLayerCount> names = {
      "fc0", "fc1_1", "fc1_t", "fc1_2", "fc2", "fc3_1", "fc3_t", "fc3_2", "fc4", "fc_emb_1",
      "fc_emb_2"};
  return names[static_cast<std::size_t>(layer)];
}

ScoreNetLayout::ScoreNetLayout(const ScoreNetConfig& c) {
  if (c.data_dim < 1 || c.outer_dim < 1 || c.inner_dim < 1 || c.time_dim < 2)
    throw ConfigError("score network dimensions must be positive");
  const std::array<std::pair<int, int>, kLayerCount> shapes = {{
      {c.outer_dim, c.data_dim},       // fc0
      {c.inner_dim, c.outer_dim},      // fc1_1
      {c.inner_dim, c.time_dim},       // fc1_t
      {c.inner_dim, c.inner_dim},      // fc1_2
      {c.inner_dim, c.inner_dim},      // fc2
      {c.outer_dim, 2 * c.inner_dim},  // fc3_1
      {c.outer_dim, c.time_dim},       // fc3_t
      {c.outer_dim, c.outer_dim},      // fc3_2
      {c.data_dim, c.outer_dim},       // fc4
      {c.time_dim, c.time_dim},        // fc_emb_1
      {c.time_dim, c.time_dim},        // fc_emb_2
  }};
  for (int l = 0; l < kLayerCount; ++l) {
    const std::string base(layer_name(static_cast<Layer>(l)));
    const auto [out, in] = shapes[l];
    slots_.push_back({base + ".weight", out, in, size_});
    size_ += static_cast<Eigen::Index>(out) * in;
    slots_.push_back({base + ".bias", out, 1, size_});
    size_ += out;
  }
}

ScoreNetParams::ScoreNetParams(const ScoreNetConfig& config)
    : config_(config), layout_(config), values_(Vector::Zero(layout_.size())) {}

ConstMatrixMap ScoreNetParams::tensor(const TensorSlot& slot) const {
  return {values_.data() + slot.offset, slot.rows, slot.cols};
}

MatrixMap ScoreNetParams::tensor(const TensorSlot& slot) {
  return {values_.data() + slot.offset, slot.rows, slot.cols};
}

void ScoreNetParams::init(Rng& rng) {
  values_.setZero();
  for (int l = 0; l < kLayerCount; ++l) {
    const auto& slot = layout_.weight(static_cast<Layer>(l));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(slot.cols)));
    auto w = tensor(slot);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = normal(rng);
  }
}

namespace {

// y = x Wᵀ + b
RowMatrix dense(const ScoreNetParams& p, Layer layer, const RowMatrix& x) {
  const auto w = p.tensor(p.layout().weight(layer));
  const auto b = p.tensor(p.layout().bias(layer));
  RowMatrix y = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
  return y;
}

// accumulates dW = dyᵀ x, db = colsum(dy); returns dx = dy W
RowMatrix dense_backward(const ScoreNetParams& p, Layer layer, const RowMatrix& x,
                         const RowMatrix& dy, Vector& grad, bool need_dx = true) {
  const auto& ws = p.layout().weight(layer);
  const auto& bs = p.layout().bias(layer);
  MatrixMap dw(grad.data() + ws.offset, ws.rows, ws.cols);
  MatrixMap db(grad.data() + bs.offset, bs.rows, bs.cols);
  dw.noalias() += dy.transpose() * x;
  db.col(0) += dy.colwise().sum().transpose();
  if (!need_dx) return {};
  return dy * p.tensor(ws);
}

RowMatrix tanh_of(const RowMatrix& x) { return x.array().tanh().matrix(); }

RowMatrix tanh_backward(const RowMatrix& activated, const RowMatrix& dy) {
  return (dy.array() * (1.0 - activated.array().square())).matrix();
}

void add_time_rows(RowMatrix& target, const RowMatrix& time_rows,
                   const std::vector<Eigen::Index>& time_row) {
  if (time_rows.rows() == 1) {
    target.rowwise() += time_rows.row(0);
    return;
  }
  for (Eigen::Index r = 0; r < target.rows(); ++r) target.row(r) += time_rows.row(time_row[r]);
}

RowMatrix gather_time_grad(const RowMatrix& d, Eigen::Index distinct,
                           const std::vector<Eigen::Index>& time_row) {
  RowMatrix out = RowMatrix::Zero(distinct, d.cols());
  if (distinct == 1) {
    out.row(0) = d.colwise().sum();
    return out;
  }
  for (Eigen::Index r = 0; r < d.rows(); ++r) out.row(time_row[r]) += d.row(r);
  return out;
}

}  // namespace

ScoreNetTrace score_forward_trace(const ScoreNetParams& params, const RowMatrix& e,
                                  std::span<const double> sigmas) {
  const auto& cfg = params.config();
  if (e.cols() != cfg.data_dim)
    throw ConfigError("score network expects width " + std::to_string(cfg.data_dim) + ", got " +
                      std::to_string(e.cols()));
  const auto rows = e.rows();
  if (sigmas.size() != 1 && static_cast<Eigen::Index>(sigmas.size()) != rows)
    throw ConfigError("need one noise level per row or a single shared one");

  ScoreNetTrace t;
  t.input = e;

  // time branch over distinct noise levels
  std::vector<double> distinct;
  t.time_row.assign(static_cast<std::size_t>(rows), 0);
  if (sigmas.size() == 1) {
    distinct.push_back(sigmas[0]);
  } else {
    std::unordered_map<double, Eigen::Index> seen;
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto [it, inserted] = seen.try_emplace(sigmas[r], static_cast<Eigen::Index>(distinct.size()));
      if (inserted) distinct.push_back(sigmas[r]);
      t.time_row[r] = it->second;
    }
  }
  t.time_features.resize(static_cast<Eigen::Index>(distinct.size()), cfg.time_dim);
  for (std::size_t k = 0; k < distinct.size(); ++k)
    t.time_features.row(static_cast<Eigen::Index>(k)) = sinusoidal_embedding(distinct[k], cfg.time_dim);
  t.time_hidden = tanh_of(dense(params, Layer::fc_emb_1, t.time_features));
  t.time_embedding = dense(params, Layer::fc_emb_2, t.time_hidden);
  const RowMatrix t1 = dense(params, Layer::fc1_t, t.time_embedding);
  const RowMatrix t3 = dense(params, Layer::fc3_t, t.time_embedding);

  t.h0 = dense(params, Layer::fc0, e);
  t.a1 = tanh_of(dense(params, Layer::fc1_1, t.h0));
  t.pre1 = t.a1;
  add_time_rows(t.pre1, t1, t.time_row);
  t.h1 = dense(params, Layer::fc1_2, t.pre1);
  t.h2 = tanh_of(dense(params, Layer::fc2, t.h1));
  t.cat.resize(rows, 2 * cfg.inner_dim);
  t.cat.leftCols(cfg.inner_dim) = t.h2;
  t.cat.rightCols(cfg.inner_dim) = t.h1;
  t.a3 = tanh_of(dense(params, Layer::fc3_1, t.cat));
  t.pre3 = t.a3;
  add_time_rows(t.pre3, t3, t.time_row);
  t.h3 = dense(params, Layer::fc3_2, t.pre3);
  t.output = dense(params, Layer::fc4, t.h3);
  return t;
}

RowMatrix score_forward(const ScoreNetParams& params, const RowMatrix& e,
                        std::span<const double> sigmas) {
  return score_forward_trace(params, e, sigmas).output;
}

Vector score_backward(const ScoreNetParams& params, const ScoreNetTrace& t,
                      const RowMatrix& grad_output, RowMatrix* grad_input) {
  const auto& cfg = params.config();
  Vector grad = Vector::Zero(params.layout().size());

  const RowMatrix d_h3 = dense_backward(params, Layer::fc4, t.h3, grad_output, grad);
  const RowMatrix d_pre3 = dense_backward(params, Layer::fc3_2, t.pre3, d_h3, grad);
  const RowMatrix d_t3 = gather_time_grad(d_pre3, t.time_embedding.rows(), t.time_row);
  const RowMatrix d_cat =
      dense_backward(params, Layer::fc3_1, t.cat, tanh_backward(t.a3, d_pre3), grad);
  const RowMatrix d_h2 = d_cat.leftCols(cfg.inner_dim);
  RowMatrix d_h1 = d_cat.rightCols(cfg.inner_dim);
  d_h1 += dense_backward(params, Layer::fc2, t.h1, tanh_backward(t.h2, d_h2), grad);
  const RowMatrix d_pre1 = dense_backward(params, Layer::fc1_2, t.pre1, d_h1, grad);
  const RowMatrix d_t1 = gather_time_grad(d_pre1, t.time_embedding.rows(), t.time_row);
  const RowMatrix d_h0 =
      dense_backward(params, Layer::fc1_1, t.h0, tanh_backward(t.a1, d_pre1), grad);
  const RowMatrix d_in = dense_backward(params, Layer::fc0, t.input, d_h0, grad, grad_input != nullptr);
  if (grad_input != nullptr) *grad_input = d_in;

  RowMatrix d_temb = dense_backward(params, Layer::fc1_t, t.time_embedding, d_t1, grad);
  d_temb += dense_backward(params, Layer::fc3_t, t.time_embedding, d_t3, grad);
  const RowMatrix d_hidden = dense_backward(params, Layer::fc_emb_2, t.time_hidden, d_temb, grad);
  dense_backward(params, Layer::fc_emb_1, t.time_features, tanh_backward(t.time_hidden, d_hidden),
                 grad, false);
  return grad;
}

RowMatrix denoising_target(const RowMatrix& e_t, const RowMatrix& e0, double variance) {
  return -(e_t - e0) / variance;
}

DsmResult dsm_loss(const ScoreNetParams& params, const RowMatrix& e0, const SdeSchedule& schedule,
                   std::span<const int> steps, const RowMatrix& noise) {
  const auto rows = e0.rows();
  if (rows == 0) throw ConfigError("score matching needs a nonempty batch");
  if (static_cast<Eigen::Index>(steps.size()) != rows || noise.rows() != rows ||
      noise.cols() != e0.cols())
    throw ConfigError("steps/noise do not match the batch");

  std::vector<double> sigmas(steps.size());
  RowMatrix e_t(rows, e0.cols());
  Vector stddev(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int n = steps[r];
    if (n < 1 || n > schedule.total_steps())
      throw std::out_of_range("score matching step outside [1, T]");
    sigmas[r] = schedule.sigma_at(n);
    stddev[r] = std::sqrt(schedule.perturb_variance(n));
    e_t.row(r) = e0.row(r) + stddev[r] * noise.row(r);
  }

  const ScoreNetTrace trace = score_forward_trace(params, e_t, sigmas);
  // λ‖S − target‖² with target = −z/std and λ = std² equals ‖std·S + z‖².
  RowMatrix residual = trace.output;
  for (Eigen::Index r = 0; r < rows; ++r) residual.row(r) = stddev[r] * residual.row(r) + noise.row(r);

  DsmResult result;
  result.loss = residual.squaredNorm() / static_cast<double>(rows);
  RowMatrix d_out = residual;
  for (Eigen::Index r = 0; r < rows; ++r) d_out.row(r) *= 2.0 * stddev[r] / static_cast<double>(rows);
  result.grad = score_backward(params, trace, d_out);
  return result;
}

DsmResult dsm_loss(const ScoreNetParams& params, const RowMatrix& e0, const SdeSchedule& schedule,
                   Rng& rng) {
  std::uniform_int_distribution<int> pick(1, schedule.total_steps());
  std::vector<int> steps(static_cast<std::size_t>(e0.rows()));
  for (auto& s : steps) s = pick(rng);
  const RowMatrix noise = standard_normal(e0.rows(), e0.cols(), rng);
  return dsm_loss(params, e0, schedule, steps, noise);
}

namespace {
constexpr std::string_view kScoreNetMagic = "SCONESGM";
}

void save_score_net(const ScoreNetParams& params, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& out) {
    io::write_bytes(out, kScoreNetMagic);
    io::write_u32(out, kScoreNetFormatVersion);
    for (const auto& slot : params.layout().slots()) {
      io::write_u32(out, static_cast<std::uint32_t>(slot.name.size()));
      io::write_bytes(out, slot.name);
      const bool is_bias = slot.cols == 1 && slot.name.ends_with(".bias");
      io::write_u32(out, is_bias ? 1 : 2);
      io::write_u32(out, static_cast<std::uint32_t>(slot.rows));
      if (!is_bias) io::write_u32(out, static_cast<std::uint32_t>(slot.cols));
      const auto t = params.tensor(slot);
      for (Eigen::Index k = 0; k < t.size(); ++k) io::write_f32(out, static_cast<float>(t.data()[k]));
    }
  });
}

ScoreNetParams load_score_net(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open score checkpoint " + path.string());
  if (io::read_bytes(in, kScoreNetMagic.size()) != kScoreNetMagic)
    throw InputError(path.string() + ": not a score-network checkpoint");
  const auto version = io::read_u32(in);
  if (version != kScoreNetFormatVersion)
    throw InputError(path.string() + ": unsupported version " + std::to_string(version));

  struct Loaded {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::vector<Loaded> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    Loaded t;
    t.name = io::read_bytes(in, io::read_u32(in));
    const auto rank = io::read_u32(in);
    if (rank < 1 || rank > 2) throw InputError(path.string() + ": bad rank for " + t.name);
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(io::read_u32(in));
      count *= t.dims.back();
    }
    t.data.resize(count);
    for (auto& v : t.data) v = io::read_f32(in);
    tensors.push_back(std::move(t));
  }
  if (tensors.size() != 2 * kLayerCount)
    throw InputError(path.string() + ": expected " + std::to_string(2 * kLayerCount) + " tensors");

  auto dims_of = [&](Layer l) -> const std::vector<std::uint32_t>& {
    return tensors[2 * static_cast<std::size_t>(l)].dims;
  };
  ScoreNetConfig cfg;
  if (dims_of(Layer::fc0).size() != 2 || dims_of(Layer::fc1_1).size() != 2 ||
      dims_of(Layer::fc_emb_1).size() != 2)
    throw InputError(path.string() + ": malformed weight tensors");
  cfg.data_dim = static_cast<int>(dims_of(Layer::fc0)[1]);
  cfg.outer_dim = static_cast<int>(dims_of(Layer::fc0)[0]);
  cfg.inner_dim = static_cast<int>(dims_of(Layer::fc1_1)[0]);
  cfg.time_dim = static_cast<int>(dims_of(Layer::fc_emb_1)[1]);

  ScoreNetParams params(cfg);
  const auto& slots = params.layout().slots();
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& slot = slots[k];
    const auto& t = tensors[k];
    if (t.name != slot.name || static_cast<Eigen::Index>(t.data.size()) != slot.size())
      throw InputError(path.string() + ": tensor " + t.name + " does not match " + slot.name);
    auto dst = params.tensor(slot);
    for (Eigen::Index i = 0; i < slot.size(); ++i) dst.data()[i] = t.data[static_cast<std::size_t>(i)];
  }
  return params;
}

}  // namespace scone
