#include "sectune/tinylm.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace sectune {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

struct Norm {
  Matrix xhat, out;
  Vector rstd;
};

Norm layer_norm(const Matrix& x, const Eigen::Ref<const Vector>& g, const Eigen::Ref<const Vector>& b) {
  Norm n;
  const Eigen::Index d = x.cols();
  Vector mu = x.rowwise().mean();
  Matrix xc = x.colwise() - mu;
  Vector var = xc.rowwise().squaredNorm() / static_cast<double>(d);
  n.rstd = (var.array() + kLnEps).rsqrt();
  n.xhat = xc.array().colwise() * n.rstd.array();
  n.out = (n.xhat.array().rowwise() * g.transpose().array()).rowwise() + b.transpose().array();
  return n;
}

// Returns d loss / d x; accumulates gain and bias gradients.
Matrix layer_norm_backward(const Matrix& dout, const Matrix& xhat, const Vector& rstd, const Eigen::Ref<const Vector>& g,
                           Eigen::Map<Matrix> dg, Eigen::Map<Matrix> db) {
  dg += (dout.array() * xhat.array()).colwise().sum().transpose().matrix();
  db += dout.colwise().sum().transpose();
  Matrix dxhat = dout.array().rowwise() * g.transpose().array();
  const double inv_d = 1.0 / static_cast<double>(dout.cols());
  Vector mean_dxhat = dxhat.rowwise().sum() * inv_d;
  Vector mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum().matrix() * inv_d;
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * rstd.array();
}

Matrix gelu(const Matrix& u) {
  return u.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); });
}

Matrix gelu_grad(const Matrix& u) {
  return u.unaryExpr([](double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  });
}

void check_finite(const Matrix& x, const char* op) {
  if (!x.allFinite()) throw NonFiniteError(op);
}

void check_tokens(const ModelState& m, const TokenSeq& tokens) {
  const auto& cfg = m.config();
  if (static_cast<int>(tokens.size()) > cfg.context) {
    throw ContextOverflow("sequence of length " + std::to_string(tokens.size()) + " exceeds context " +
                          std::to_string(cfg.context));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
  }
}

// Everything up to the final normalised hidden states.
void forward_trunk(const ModelState& m, const TokenSeq& tokens, ForwardPass& pass) {
  check_tokens(m, tokens);
  const auto& cfg = m.config();
  const auto& L = m.layout();
  const Vector& p = m.params();
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const int dh = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  pass.tokens = tokens;
  auto wte = view(p, L.wte);
  Matrix x = view(p, L.wpe).topRows(T);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) += wte.row(tokens[static_cast<std::size_t>(t)]);

  pass.blocks.resize(L.blocks.size());
  for (std::size_t l = 0; l < L.blocks.size(); ++l) {
    const auto& B = L.blocks[l];
    auto& c = pass.blocks[l];
    c.x_in = x;
    Norm n1 = layer_norm(x, view(p, B.ln1_g), view(p, B.ln1_b));
    c.xhat1 = std::move(n1.xhat);
    c.h1 = std::move(n1.out);
    c.rstd1 = std::move(n1.rstd);
    c.qkv = c.h1 * view(p, B.w_qkv);
    c.qkv.leftCols(cfg.d_model).rowwise() += view(p, B.b_q).transpose().row(0);
    c.qkv.rightCols(cfg.d_model).rowwise() += view(p, B.b_v).transpose().row(0);

    c.attn_out.resize(T, cfg.d_model);
    c.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto q = c.qkv.middleCols(h * dh, dh);
      auto k = c.qkv.middleCols(cfg.d_model + h * dh, dh);
      auto v = c.qkv.middleCols(2 * cfg.d_model + h * dh, dh);
      Matrix s = (q * k.transpose()) * scale;
      Matrix& pr = c.probs[static_cast<std::size_t>(h)];
      pr = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        auto row = s.row(i).head(i + 1);
        const double mx = row.maxCoeff();
        auto e = (row.array() - mx).exp();
        pr.row(i).head(i + 1) = e / e.sum();
      }
      c.attn_out.middleCols(h * dh, dh) = pr * v;
    }
    c.x_mid = x + ((c.attn_out * view(p, B.w_o)).rowwise() + view(p, B.b_o).transpose().row(0));

    Norm n2 = layer_norm(c.x_mid, view(p, B.ln2_g), view(p, B.ln2_b));
    c.xhat2 = std::move(n2.xhat);
    c.h2 = std::move(n2.out);
    c.rstd2 = std::move(n2.rstd);
    c.u = (c.h2 * view(p, B.w_fc)).rowwise() + view(p, B.b_fc).transpose().row(0);
    c.g = gelu(c.u);
    x = c.x_mid + ((c.g * view(p, B.w_proj)).rowwise() + view(p, B.b_proj).transpose().row(0));
  }
  pass.x_final = x;
  Norm nf = layer_norm(x, view(p, L.lnf_g), view(p, L.lnf_b));
  pass.xhat_f = std::move(nf.xhat);
  pass.h_f = std::move(nf.out);
  pass.rstd_f = std::move(nf.rstd);
}

Vector last_logits(const ModelState& m, const TokenSeq& ctx) {
  if (ctx.empty()) throw std::invalid_argument("next_token_dist needs a non-empty context");
  ForwardPass pass;
  forward_trunk(m, ctx, pass);
  const auto& L = m.layout();
  Vector logits = view(m.params(), L.w_head).transpose() * pass.h_f.bottomRows(1).transpose() + view(m.params(), L.b_head);
  check_finite(logits, "logits");
  return logits;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw std::runtime_error("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

constexpr char kMagic[4] = {'S', 'C', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < Tokenizer::kNumSpecial) throw std::invalid_argument("vocab_size too small");
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || context < 1) throw std::invalid_argument("model dimensions must be positive");
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d_model;
  auto take = [this](Eigen::Index rows, Eigen::Index cols) {
    Slice s{total, rows, cols};
    total += rows * cols;
    return s;
  };
  wte = take(cfg.vocab_size, d);
  wpe = take(cfg.context, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    Block b;
    b.ln1_g = take(d, 1);
    b.ln1_b = take(d, 1);
    b.w_qkv = take(d, 3 * d);
    b.b_q = take(d, 1);
    b.b_v = take(d, 1);
    b.w_o = take(d, d);
    b.b_o = take(d, 1);
    b.ln2_g = take(d, 1);
    b.ln2_b = take(d, 1);
    b.w_fc = take(d, 4 * d);
    b.b_fc = take(4 * d, 1);
    b.w_proj = take(4 * d, d);
    b.b_proj = take(d, 1);
    blocks.push_back(b);
  }
  lnf_g = take(d, 1);
  lnf_b = take(d, 1);
  w_head = take(d, cfg.vocab_size);
  b_head = take(cfg.vocab_size, 1);
}

std::vector<std::pair<std::string, Slice>> ParamLayout::named() const {
  std::vector<std::pair<std::string, Slice>> out{{"wte", wte}, {"wpe", wpe}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string pre = "h" + std::to_string(l) + ".";
    for (auto [name, s] : {std::pair{"ln1.g", b.ln1_g}, {"ln1.b", b.ln1_b}, {"attn.w_qkv", b.w_qkv}, {"attn.b_q", b.b_q}, {"attn.b_v", b.b_v},
                           {"attn.w_o", b.w_o}, {"attn.b_o", b.b_o}, {"ln2.g", b.ln2_g}, {"ln2.b", b.ln2_b},
                           {"mlp.w_fc", b.w_fc}, {"mlp.b_fc", b.b_fc}, {"mlp.w_proj", b.w_proj}, {"mlp.b_proj", b.b_proj}}) {
      out.emplace_back(pre + name, s);
    }
  }
  out.emplace_back("lnf.g", lnf_g);
  out.emplace_back("lnf.b", lnf_b);
  out.emplace_back("head.w", w_head);
  out.emplace_back("head.b", b_head);
  return out;
}

Eigen::Index param_count(const ModelConfig& cfg) { return ParamLayout(cfg).total; }

ModelState::ModelState(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg), params_(Vector::Zero(layout_.total)) {
  for (const auto& b : layout_.blocks) {
    view(params_, b.ln1_g).setOnes();
    view(params_, b.ln2_g).setOnes();
  }
  view(params_, layout_.lnf_g).setOnes();
}

ModelState ModelState::init(const ModelConfig& cfg, std::uint64_t seed) {
  ModelState m(cfg);
  Rng rng(seed);
  auto fill = [&](const Slice& s, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    auto w = view(m.params_, s);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    }
  };
  const double d = cfg.d_model;
  fill(m.layout_.wte, d);
  fill(m.layout_.wpe, d);
  for (const auto& b : m.layout_.blocks) {
    fill(b.w_qkv, d);
    fill(b.w_o, d);
    fill(b.w_fc, d);
    fill(b.w_proj, 4 * d);
  }
  fill(m.layout_.w_head, d);
  return m;
}

void ModelState::zero_output_head() {
  view(params_, layout_.w_head).setZero();
  view(params_, layout_.b_head).setZero();
}

ForwardPass forward(const ModelState& m, const TokenSeq& tokens) {
  ForwardPass pass;
  forward_trunk(m, tokens, pass);
  const auto& L = m.layout();
  pass.logits = (pass.h_f * view(m.params(), L.w_head)).rowwise() + view(m.params(), L.b_head).transpose().row(0);
  check_finite(pass.logits, "logits");
  return pass;
}

Vector backward(const ModelState& m, const ForwardPass& pass, const Matrix& dlogits) {
  const auto& cfg = m.config();
  const auto& L = m.layout();
  const Vector& p = m.params();
  const auto T = static_cast<Eigen::Index>(pass.tokens.size());
  if (dlogits.rows() != T || dlogits.cols() != cfg.vocab_size) throw std::invalid_argument("dlogits shape mismatch");
  check_finite(dlogits, "loss gradient");
  const int dh = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Vector grad = Vector::Zero(L.total);
  view(grad, L.w_head) += pass.h_f.transpose() * dlogits;
  view(grad, L.b_head) += dlogits.colwise().sum().transpose();
  Matrix dh_f = dlogits * view(p, L.w_head).transpose();
  Matrix dx = layer_norm_backward(dh_f, pass.xhat_f, pass.rstd_f, view(p, L.lnf_g), view(grad, L.lnf_g), view(grad, L.lnf_b));
  check_finite(dx, "final layer norm");

  for (std::size_t l = L.blocks.size(); l-- > 0;) {
    const auto& B = L.blocks[l];
    const auto& c = pass.blocks[l];

    // MLP residual branch
    view(grad, B.w_proj) += c.g.transpose() * dx;
    view(grad, B.b_proj) += dx.colwise().sum().transpose();
    Matrix du = (dx * view(p, B.w_proj).transpose()).cwiseProduct(gelu_grad(c.u));
    view(grad, B.w_fc) += c.h2.transpose() * du;
    view(grad, B.b_fc) += du.colwise().sum().transpose();
    Matrix dh2 = du * view(p, B.w_fc).transpose();
    Matrix dx_mid = dx + layer_norm_backward(dh2, c.xhat2, c.rstd2, view(p, B.ln2_g), view(grad, B.ln2_g), view(grad, B.ln2_b));
    check_finite(dx_mid, "mlp");

    // attention residual branch
    view(grad, B.w_o) += c.attn_out.transpose() * dx_mid;
    view(grad, B.b_o) += dx_mid.colwise().sum().transpose();
    Matrix dattn = dx_mid * view(p, B.w_o).transpose();
    Matrix dqkv(T, 3 * cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Matrix& pr = c.probs[static_cast<std::size_t>(h)];
      auto q = c.qkv.middleCols(h * dh, dh);
      auto k = c.qkv.middleCols(cfg.d_model + h * dh, dh);
      auto v = c.qkv.middleCols(2 * cfg.d_model + h * dh, dh);
      auto dout = dattn.middleCols(h * dh, dh);
      Matrix dprobs = dout * v.transpose();
      dqkv.middleCols(2 * cfg.d_model + h * dh, dh) = pr.transpose() * dout;
      Vector rowdot = (dprobs.array() * pr.array()).rowwise().sum();
      Matrix ds = (pr.array() * (dprobs.colwise() - rowdot).array()).matrix() * scale;
      dqkv.middleCols(h * dh, dh) = ds * k;
      dqkv.middleCols(cfg.d_model + h * dh, dh) = ds.transpose() * q;
    }
    view(grad, B.w_qkv) += c.h1.transpose() * dqkv;
    view(grad, B.b_q) += dqkv.leftCols(cfg.d_model).colwise().sum().transpose();
    view(grad, B.b_v) += dqkv.rightCols(cfg.d_model).colwise().sum().transpose();
    Matrix dh1 = dqkv * view(p, B.w_qkv).transpose();
    dx = dx_mid + layer_norm_backward(dh1, c.xhat1, c.rstd1, view(p, B.ln1_g), view(grad, B.ln1_g), view(grad, B.ln1_b));
    check_finite(dx, "attention");
  }

  auto dwte = view(grad, L.wte);
  for (Eigen::Index t = 0; t < T; ++t) dwte.row(pass.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
  view(grad, L.wpe).topRows(T) += dx;
  check_finite(grad, "embedding");
  return grad;
}

Vector log_softmax(const Eigen::Ref<const Vector>& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

Vector next_token_dist(const ModelState& m, const TokenSeq& ctx) {
  Vector probs = log_softmax(last_logits(m, ctx)).array().exp();
  return probs / probs.sum();
}

double sequence_logprob(const ModelState& m, const TokenSeq& x) {
  if (x.empty()) return 0.0;
  TokenSeq input{Tokenizer::kBos};
  input.insert(input.end(), x.begin(), x.end() - 1);
  ForwardPass pass = forward(m, input);
  double total = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) total += log_softmax(pass.logits.row(static_cast<Eigen::Index>(t)).transpose())(x[t]);
  return total;
}

TokenId sample_token(const Eigen::Ref<const Vector>& logits, double temperature, Rng& rng) {
  if (temperature < 0) throw std::invalid_argument("temperature must be non-negative");
  if (temperature == 0.0) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
      if (logits(i) > logits(best)) best = i;
    }
    return static_cast<TokenId>(best);
  }
  Vector scaled = logits / temperature;
  Vector w = (scaled.array() - scaled.maxCoeff()).exp();
  double u = rng.uniform() * w.sum();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    u -= w(i);
    if (u < 0) return static_cast<TokenId>(i);
  }
  // Rounding left u >= 0: return the last token with non-zero weight.
  for (Eigen::Index i = w.size(); i-- > 0;) {
    if (w(i) > 0) return static_cast<TokenId>(i);
  }
  return 0;
}

Sampled sample(const ModelState& m, const TokenSeq& prompt, double temperature, int max_new, Rng& rng) {
  Sampled out;
  TokenSeq ctx = prompt;
  for (int step = 0; step < max_new && static_cast<int>(ctx.size()) < m.config().context; ++step) {
    TokenId next = sample_token(last_logits(m, ctx), temperature, rng);
    if (next == Tokenizer::kEos) {
      out.finished = true;
      break;
    }
    ctx.push_back(next);
    out.tokens.push_back(next);
  }
  return out;
}

std::string checkpoint_bytes(const ModelState& m) {
  const auto& cfg = m.config();
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  for (int v : {cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.context}) put_u32(out, static_cast<std::uint32_t>(v));
  put_u64(out, static_cast<std::uint64_t>(m.param_count()));
  for (Eigen::Index i = 0; i < m.param_count(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.params()(i)));
  return out;
}

ModelState checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  if (get_le(bytes, pos, 4) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  ModelConfig cfg;
  for (int* f : {&cfg.vocab_size, &cfg.d_model, &cfg.n_layers, &cfg.n_heads, &cfg.context}) *f = static_cast<int>(get_le(bytes, pos, 4));
  ModelState m(cfg);
  if (get_le(bytes, pos, 8) != static_cast<std::uint64_t>(m.param_count())) throw std::runtime_error("checkpoint parameter count mismatch");
  for (Eigen::Index i = 0; i < m.param_count(); ++i) m.params()(i) = std::bit_cast<double>(get_le(bytes, pos, 8));
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint");
  if (!m.params().allFinite()) throw std::runtime_error("checkpoint contains non-finite parameters");
  return m;
}

void save_checkpoint(const ModelState& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = checkpoint_bytes(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

}  // namespace sectune
