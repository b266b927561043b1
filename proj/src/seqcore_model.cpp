#include "otto/seqcore/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "otto/rng.hpp"

namespace otto {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr int kGradChunks = 8;

template <class F>
void walk_tensors(const ModelConfig& c, F&& f) {
  const size_t e = size_t(c.embed_dim);
  f("state_embed_w", e * c.d_s);
  f("state_embed_b", e);
  f("action_embed_w", e * c.d_a);
  f("action_embed_b", e);
  f("step_embed", size_t(c.max_step) * e);
  for (int l = 0; l < c.n_layer; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "ln1_g", e);
    f(p + "ln1_b", e);
    f(p + "attn_qkv_w", 3 * e * e);
    f(p + "attn_qkv_b", 3 * e);
    f(p + "attn_proj_w", e * e);
    f(p + "attn_proj_b", e);
    f(p + "ln2_g", e);
    f(p + "ln2_b", e);
    f(p + "mlp_fc_w", 4 * e * e);
    f(p + "mlp_fc_b", 4 * e);
    f(p + "mlp_out_w", 4 * e * e);
    f(p + "mlp_out_b", e);
  }
  f("lnf_g", e);
  f("lnf_b", e);
  f("head_w", size_t(c.out_dim()) * e);
  f("head_b", size_t(c.out_dim()));
}

struct LayerOffs {
  size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  size_t ln2_g, ln2_b, fc_w, fc_b, fc2_w, fc2_b;
};

struct Offs {
  size_t state_w, state_b, action_w, action_b, step_emb;
  std::vector<LayerOffs> layers;
  size_t lnf_g, lnf_b, head_w, head_b;
  size_t total;
};

Offs make_offs(const ModelConfig& c) {
  Offs o;
  std::vector<size_t> v;
  size_t pos = 0;
  walk_tensors(c, [&](const std::string&, size_t n) {
    v.push_back(pos);
    pos += n;
  });
  o.total = pos;
  size_t i = 0;
  o.state_w = v[i++];
  o.state_b = v[i++];
  o.action_w = v[i++];
  o.action_b = v[i++];
  o.step_emb = v[i++];
  o.layers.resize(c.n_layer);
  for (int l = 0; l < c.n_layer; ++l) {
    LayerOffs& lo = o.layers[l];
    lo.ln1_g = v[i++];
    lo.ln1_b = v[i++];
    lo.qkv_w = v[i++];
    lo.qkv_b = v[i++];
    lo.proj_w = v[i++];
    lo.proj_b = v[i++];
    lo.ln2_g = v[i++];
    lo.ln2_b = v[i++];
    lo.fc_w = v[i++];
    lo.fc_b = v[i++];
    lo.fc2_w = v[i++];
    lo.fc2_b = v[i++];
  }
  o.lnf_g = v[i++];
  o.lnf_b = v[i++];
  o.head_w = v[i++];
  o.head_b = v[i++];
  return o;
}

// y = W x + b, W row-major out x in
inline void affine(const double* W, const double* b, const double* x, double* y, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const double* w = W + size_t(o) * in;
    double acc = b ? b[o] : 0.0;
    for (int i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

// dx += W^T dy
inline void affine_bwd_input(const double* W, const double* dy, double* dx, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    const double* w = W + size_t(o) * in;
    for (int i = 0; i < in; ++i) dx[i] += d * w[i];
  }
}

// dW += dy x^T, db += dy
inline void affine_bwd_params(const double* x, const double* dy, double* dW, double* db, int out,
                              int in) {
  for (int o = 0; o < out; ++o) {
    const double d = dy[o];
    db[o] += d;
    if (d == 0.0) continue;
    double* w = dW + size_t(o) * in;
    for (int i = 0; i < in; ++i) w[i] += d * x[i];
  }
}

inline void layernorm_fwd(const double* x, const double* g, const double* b, int n, double* xhat,
                          double* rstd_out, double* y) {
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = x[i] - mean;
    var += d * d;
  }
  var /= n;
  double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * rstd;
    y[i] = g[i] * xhat[i] + b[i];
  }
  *rstd_out = rstd;
}

inline void layernorm_bwd(const double* dy, const double* xhat, double rstd, const double* g,
                          int n, double* dg, double* db, double* dx_accum) {
  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
  for (int i = 0; i < n; ++i) {
    dg[i] += dy[i] * xhat[i];
    db[i] += dy[i];
    double dxhat = dy[i] * g[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat[i];
  }
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    double dxhat = dy[i] * g[i];
    dx_accum[i] += rstd * (dxhat - inv_n * sum_dxhat - xhat[i] * inv_n * sum_dxhat_xhat);
  }
}

struct LayerCache {
  std::vector<double> x_in, ln1_xhat, ln1_rstd, ln1_out, qkv;
  std::vector<double> probs, prob_mask;  // n_head x T x T
  std::vector<double> ctx, attn_out, attn_mask, x_mid;
  std::vector<double> ln2_xhat, ln2_rstd, ln2_out, hmid, mlp_out, mlp_mask;
};

struct Workspace {
  std::vector<double> emb, emb_mask;
  std::vector<LayerCache> layers;
  std::vector<double> x_final, lnf_xhat, lnf_rstd, lnf_out;
  std::vector<double> preds;
  // backward scratch
  std::vector<double> dx, dtok, dqkv, dctx, dscore, dhmid, dbranch;

  void resize(const ModelConfig& c) {
    const int T = 2 * c.context_len;
    const size_t e = size_t(c.embed_dim);
    const size_t te = size_t(T) * e;
    emb.resize(te);
    emb_mask.resize(te);
    layers.resize(c.n_layer);
    for (auto& L : layers) {
      L.x_in.resize(te);
      L.ln1_xhat.resize(te);
      L.ln1_rstd.resize(T);
      L.ln1_out.resize(te);
      L.qkv.resize(size_t(T) * 3 * e);
      L.probs.resize(size_t(c.n_head) * T * T);
      L.prob_mask.resize(size_t(c.n_head) * T * T);
      L.ctx.resize(te);
      L.attn_out.resize(te);
      L.attn_mask.resize(te);
      L.x_mid.resize(te);
      L.ln2_xhat.resize(te);
      L.ln2_rstd.resize(T);
      L.ln2_out.resize(te);
      L.hmid.resize(size_t(T) * 4 * e);
      L.mlp_out.resize(te);
      L.mlp_mask.resize(te);
    }
    x_final.resize(te);
    lnf_xhat.resize(te);
    lnf_rstd.resize(T);
    lnf_out.resize(te);
    preds.resize(size_t(c.context_len) * c.out_dim());
    dx.resize(te);
    dtok.resize(te);
    dqkv.resize(size_t(T) * 3 * e);
    dctx.resize(te);
    dscore.resize(T);
    dhmid.resize(size_t(T) * 4 * e);
    dbranch.resize(e);
  }
};

void check_finite(const std::vector<double>& v, const char* where) {
  for (double x : v)
    if (!std::isfinite(x))
      throw std::runtime_error(std::string("non-finite activation in ") + where);
}

void fill_dropout_mask(std::vector<double>& mask, Rng& rng, double rate) {
  const double scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : scale;
}

// Forward (and, when grad != nullptr, backward) over one window.
// Returns the window loss when targets are given, else 0. Gradients are
// accumulated unscaled; the caller divides by the batch size.
double window_pass(const SequenceModel& model, const Offs& off, const TokenWindow& w,
                   const double* targets, const uint8_t* tmask, bool train_mode,
                   uint64_t dropout_seed, double* grad, Workspace& ws) {
  const ModelConfig& c = model.config();
  if (w.n_steps != c.context_len)
    throw std::invalid_argument("window length does not match model context_len");
  const int L = c.context_len;
  const int T = 2 * L;
  const int e = c.embed_dim;
  const int nh = c.n_head;
  const int dh = e / nh;
  const int out = c.out_dim();
  const double* P = model.params().data();
  const double att_scale = 1.0 / std::sqrt(double(dh));
  ws.resize(c);

  const bool dropout_on = train_mode && c.dropout > 0.0;
  Rng drop_rng(derive_seed(dropout_seed, "dropout"));

  // token validity and step ids
  auto tok_valid = [&](int p) { return w.valid[p / 2] != 0; };

  // embeddings
  std::fill(ws.emb.begin(), ws.emb.end(), 0.0);
  for (int k = 0; k < L; ++k) {
    if (!w.valid[k]) continue;
    int64_t step = w.step_ids[k];
    if (step < 0 || step >= c.max_step)
      throw std::out_of_range("step index " + std::to_string(step) +
                              " outside step-embedding table of size " +
                              std::to_string(c.max_step));
    const double* se = P + off.step_emb + size_t(step) * e;
    double* es = ws.emb.data() + size_t(2 * k) * e;
    affine(P + off.state_w, P + off.state_b, w.states.data() + size_t(k) * c.d_s, es, e, c.d_s);
    for (int i = 0; i < e; ++i) es[i] += se[i];
    double* ea = ws.emb.data() + size_t(2 * k + 1) * e;
    affine(P + off.action_w, P + off.action_b, w.actions.data() + size_t(k) * c.d_a, ea, e, c.d_a);
    for (int i = 0; i < e; ++i) ea[i] += se[i];
  }
  if (dropout_on)
    fill_dropout_mask(ws.emb_mask, drop_rng, c.dropout);
  else
    std::fill(ws.emb_mask.begin(), ws.emb_mask.end(), 1.0);
  for (size_t i = 0; i < ws.emb.size(); ++i) ws.emb[i] *= ws.emb_mask[i];

  // transformer blocks
  const double* x = ws.emb.data();
  for (int l = 0; l < c.n_layer; ++l) {
    LayerCache& lc = ws.layers[l];
    const LayerOffs& lo = off.layers[l];
    std::copy(x, x + size_t(T) * e, lc.x_in.begin());

    for (int p = 0; p < T; ++p)
      layernorm_fwd(lc.x_in.data() + size_t(p) * e, P + lo.ln1_g, P + lo.ln1_b, e,
                    lc.ln1_xhat.data() + size_t(p) * e, &lc.ln1_rstd[p],
                    lc.ln1_out.data() + size_t(p) * e);
    for (int p = 0; p < T; ++p)
      affine(P + lo.qkv_w, P + lo.qkv_b, lc.ln1_out.data() + size_t(p) * e,
             lc.qkv.data() + size_t(p) * 3 * e, 3 * e, e);

    if (dropout_on)
      fill_dropout_mask(lc.prob_mask, drop_rng, c.dropout);
    else
      std::fill(lc.prob_mask.begin(), lc.prob_mask.end(), 1.0);

    std::fill(lc.probs.begin(), lc.probs.end(), 0.0);
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh, ko = e + h * dh, vo = 2 * e + h * dh;
      double* probs_h = lc.probs.data() + size_t(h) * T * T;
      const double* mask_h = lc.prob_mask.data() + size_t(h) * T * T;
      for (int p = 0; p < T; ++p) {
        const double* q = lc.qkv.data() + size_t(p) * 3 * e + qo;
        double mx = -1e300;
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          const double* k = lc.qkv.data() + size_t(j) * 3 * e + ko;
          double s = 0.0;
          for (int i = 0; i < dh; ++i) s += q[i] * k[i];
          s *= att_scale;
          probs_h[size_t(p) * T + j] = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          double& pr = probs_h[size_t(p) * T + j];
          pr = std::exp(pr - mx);
          sum += pr;
        }
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          probs_h[size_t(p) * T + j] /= sum;
        }
        // context
        double* cx = lc.ctx.data() + size_t(p) * e + h * dh;
        std::fill(cx, cx + dh, 0.0);
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          double pd = probs_h[size_t(p) * T + j] * mask_h[size_t(p) * T + j];
          if (pd == 0.0) continue;
          const double* v = lc.qkv.data() + size_t(j) * 3 * e + vo;
          for (int i = 0; i < dh; ++i) cx[i] += pd * v[i];
        }
      }
    }
    for (int p = 0; p < T; ++p)
      affine(P + lo.proj_w, P + lo.proj_b, lc.ctx.data() + size_t(p) * e,
             lc.attn_out.data() + size_t(p) * e, e, e);
    if (dropout_on)
      fill_dropout_mask(lc.attn_mask, drop_rng, c.dropout);
    else
      std::fill(lc.attn_mask.begin(), lc.attn_mask.end(), 1.0);
    for (size_t i = 0; i < lc.x_mid.size(); ++i)
      lc.x_mid[i] = lc.x_in[i] + lc.attn_out[i] * lc.attn_mask[i];

    for (int p = 0; p < T; ++p)
      layernorm_fwd(lc.x_mid.data() + size_t(p) * e, P + lo.ln2_g, P + lo.ln2_b, e,
                    lc.ln2_xhat.data() + size_t(p) * e, &lc.ln2_rstd[p],
                    lc.ln2_out.data() + size_t(p) * e);
    for (int p = 0; p < T; ++p) {
      double* hm = lc.hmid.data() + size_t(p) * 4 * e;
      affine(P + lo.fc_w, P + lo.fc_b, lc.ln2_out.data() + size_t(p) * e, hm, 4 * e, e);
      for (int i = 0; i < 4 * e; ++i) hm[i] = hm[i] > 0.0 ? hm[i] : 0.0;
      affine(P + lo.fc2_w, P + lo.fc2_b, hm, lc.mlp_out.data() + size_t(p) * e, e, 4 * e);
    }
    if (dropout_on)
      fill_dropout_mask(lc.mlp_mask, drop_rng, c.dropout);
    else
      std::fill(lc.mlp_mask.begin(), lc.mlp_mask.end(), 1.0);

    double* x_out = (l + 1 < c.n_layer) ? ws.layers[l + 1].x_in.data() : ws.x_final.data();
    bool finite = true;
    for (size_t i = 0; i < lc.x_mid.size(); ++i) {
      x_out[i] = lc.x_mid[i] + lc.mlp_out[i] * lc.mlp_mask[i];
      finite = finite && std::isfinite(x_out[i]);
    }
    if (!finite)
      throw std::runtime_error("non-finite activation in layer " + std::to_string(l));
    x = x_out;
  }

  for (int p = 0; p < T; ++p)
    layernorm_fwd(ws.x_final.data() + size_t(p) * e, P + off.lnf_g, P + off.lnf_b, e,
                  ws.lnf_xhat.data() + size_t(p) * e, &ws.lnf_rstd[p],
                  ws.lnf_out.data() + size_t(p) * e);

  std::fill(ws.preds.begin(), ws.preds.end(), 0.0);
  for (int k = 0; k < L; ++k) {
    if (!w.valid[k]) continue;
    affine(P + off.head_w, P + off.head_b, ws.lnf_out.data() + size_t(2 * k + 1) * e,
           ws.preds.data() + size_t(k) * out, out, e);
  }
  check_finite(ws.preds, "output head");

  if (!targets) return 0.0;

  int n_mask = 0;
  for (int k = 0; k < L; ++k)
    if (tmask[k] && w.valid[k]) ++n_mask;
  if (n_mask == 0) throw std::invalid_argument("window has no unmasked target positions");
  const double denom = double(n_mask) * out;

  double loss = 0.0;
  for (int k = 0; k < L; ++k) {
    if (!tmask[k] || !w.valid[k]) continue;
    for (int i = 0; i < out; ++i) {
      double r = ws.preds[size_t(k) * out + i] - targets[size_t(k) * out + i];
      loss += r * r;
    }
  }
  loss /= denom;
  if (!grad) return loss;

  // ---- backward ----
  std::fill(ws.dx.begin(), ws.dx.end(), 0.0);
  for (int k = 0; k < L; ++k) {
    if (!tmask[k] || !w.valid[k]) continue;
    const int p = 2 * k + 1;
    double dpred[64];  // out <= d_s, desk-scale
    std::vector<double> dpred_big;
    double* dp = dpred;
    if (out > 64) {
      dpred_big.resize(out);
      dp = dpred_big.data();
    }
    for (int i = 0; i < out; ++i)
      dp[i] = 2.0 * (ws.preds[size_t(k) * out + i] - targets[size_t(k) * out + i]) / denom;
    affine_bwd_params(ws.lnf_out.data() + size_t(p) * e, dp, grad + off.head_w, grad + off.head_b,
                      out, e);
    affine_bwd_input(P + off.head_w, dp, ws.dtok.data() + size_t(p) * e, out, e);
  }
  // dtok currently holds dL/d lnf_out; run lnf backward into dx
  for (int p = 0; p < T; ++p) {
    layernorm_bwd(ws.dtok.data() + size_t(p) * e, ws.lnf_xhat.data() + size_t(p) * e,
                  ws.lnf_rstd[p], P + off.lnf_g, e, grad + off.lnf_g, grad + off.lnf_b,
                  ws.dx.data() + size_t(p) * e);
  }
  std::fill(ws.dtok.begin(), ws.dtok.end(), 0.0);

  for (int l = c.n_layer - 1; l >= 0; --l) {
    LayerCache& lc = ws.layers[l];
    const LayerOffs& lo = off.layers[l];

    // mlp branch: x_out = x_mid + mask * mlp_out
    std::fill(ws.dhmid.begin(), ws.dhmid.end(), 0.0);
    for (int p = 0; p < T; ++p) {
      double* dmlp = ws.dbranch.data();
      for (int i = 0; i < e; ++i)
        dmlp[i] = ws.dx[size_t(p) * e + i] * lc.mlp_mask[size_t(p) * e + i];
      const double* hm = lc.hmid.data() + size_t(p) * 4 * e;
      affine_bwd_params(hm, dmlp, grad + lo.fc2_w, grad + lo.fc2_b, e, 4 * e);
      double* dh = ws.dhmid.data() + size_t(p) * 4 * e;
      affine_bwd_input(P + lo.fc2_w, dmlp, dh, e, 4 * e);
      for (int i = 0; i < 4 * e; ++i)
        if (hm[i] <= 0.0) dh[i] = 0.0;
      affine_bwd_params(lc.ln2_out.data() + size_t(p) * e, dh, grad + lo.fc_w, grad + lo.fc_b,
                        4 * e, e);
      affine_bwd_input(P + lo.fc_w, dh, ws.dtok.data() + size_t(p) * e, 4 * e, e);
    }
    // dtok = dL/d ln2_out; backprop LN2 into dx (residual gradient stays in dx)
    for (int p = 0; p < T; ++p)
      layernorm_bwd(ws.dtok.data() + size_t(p) * e, lc.ln2_xhat.data() + size_t(p) * e,
                    lc.ln2_rstd[p], P + lo.ln2_g, e, grad + lo.ln2_g, grad + lo.ln2_b,
                    ws.dx.data() + size_t(p) * e);
    std::fill(ws.dtok.begin(), ws.dtok.end(), 0.0);

    // attention branch: x_mid = x_in + mask * attn_out
    std::fill(ws.dctx.begin(), ws.dctx.end(), 0.0);
    for (int p = 0; p < T; ++p) {
      double* dao = ws.dbranch.data();
      for (int i = 0; i < e; ++i)
        dao[i] = ws.dx[size_t(p) * e + i] * lc.attn_mask[size_t(p) * e + i];
      affine_bwd_params(lc.ctx.data() + size_t(p) * e, dao, grad + lo.proj_w, grad + lo.proj_b, e,
                        e);
      affine_bwd_input(P + lo.proj_w, dao, ws.dctx.data() + size_t(p) * e, e, e);
    }
    std::fill(ws.dqkv.begin(), ws.dqkv.end(), 0.0);
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh, ko = e + h * dh, vo = 2 * e + h * dh;
      const double* probs_h = lc.probs.data() + size_t(h) * T * T;
      const double* mask_h = lc.prob_mask.data() + size_t(h) * T * T;
      for (int p = 0; p < T; ++p) {
        const double* dcx = ws.dctx.data() + size_t(p) * e + h * dh;
        const double* q = lc.qkv.data() + size_t(p) * 3 * e + qo;
        // dPd and softmax backward
        double dot_sum = 0.0;
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          const double* v = lc.qkv.data() + size_t(j) * 3 * e + vo;
          double dpd = 0.0;
          for (int i = 0; i < dh; ++i) dpd += dcx[i] * v[i];
          double pr = probs_h[size_t(p) * T + j];
          double pd = pr * mask_h[size_t(p) * T + j];
          // dv
          double* dv = ws.dqkv.data() + size_t(j) * 3 * e + vo;
          if (pd != 0.0)
            for (int i = 0; i < dh; ++i) dv[i] += pd * dcx[i];
          double dP = dpd * mask_h[size_t(p) * T + j];
          ws.dscore[j] = dP;  // reuse buffer, holds dP for now
          dot_sum += pr * dP;
        }
        for (int j = 0; j <= p; ++j) {
          if (!tok_valid(j) && j != p) continue;
          double pr = probs_h[size_t(p) * T + j];
          double ds = pr * (ws.dscore[j] - dot_sum) * att_scale;
          const double* k = lc.qkv.data() + size_t(j) * 3 * e + ko;
          double* dq = ws.dqkv.data() + size_t(p) * 3 * e + qo;
          double* dk = ws.dqkv.data() + size_t(j) * 3 * e + ko;
          for (int i = 0; i < dh; ++i) {
            dq[i] += ds * k[i];
            dk[i] += ds * q[i];
          }
        }
      }
    }
    for (int p = 0; p < T; ++p) {
      const double* dq = ws.dqkv.data() + size_t(p) * 3 * e;
      affine_bwd_params(lc.ln1_out.data() + size_t(p) * e, dq, grad + lo.qkv_w, grad + lo.qkv_b,
                        3 * e, e);
      affine_bwd_input(P + lo.qkv_w, dq, ws.dtok.data() + size_t(p) * e, 3 * e, e);
    }
    for (int p = 0; p < T; ++p)
      layernorm_bwd(ws.dtok.data() + size_t(p) * e, lc.ln1_xhat.data() + size_t(p) * e,
                    lc.ln1_rstd[p], P + lo.ln1_g, e, grad + lo.ln1_g, grad + lo.ln1_b,
                    ws.dx.data() + size_t(p) * e);
    std::fill(ws.dtok.begin(), ws.dtok.end(), 0.0);
  }

  // embedding backward
  for (size_t i = 0; i < ws.dx.size(); ++i) ws.dx[i] *= ws.emb_mask[i];
  for (int k = 0; k < L; ++k) {
    if (!w.valid[k]) continue;
    const int64_t step = w.step_ids[k];
    double* dse = grad + off.step_emb + size_t(step) * e;
    const double* ds = ws.dx.data() + size_t(2 * k) * e;
    affine_bwd_params(w.states.data() + size_t(k) * c.d_s, ds, grad + off.state_w,
                      grad + off.state_b, e, c.d_s);
    for (int i = 0; i < e; ++i) dse[i] += ds[i];
    const double* da = ws.dx.data() + size_t(2 * k + 1) * e;
    affine_bwd_params(w.actions.data() + size_t(k) * c.d_a, da, grad + off.action_w,
                      grad + off.action_b, e, c.d_a);
    for (int i = 0; i < e; ++i) dse[i] += da[i];
  }
  return loss;
}

}  // namespace

TokenWindow make_window(std::span<const Step> steps, int context_len, const Stats& stats) {
  if (steps.empty()) throw std::invalid_argument("make_window: empty step span");
  if (int(steps.size()) > context_len)
    throw std::invalid_argument("make_window: " + std::to_string(steps.size()) +
                                " steps exceed context length " + std::to_string(context_len));
  const int d_s = int(stats.state_mean.size());
  const int d_a = int(stats.action_mean.size());
  TokenWindow w;
  w.n_steps = context_len;
  w.valid_steps = int(steps.size());
  w.states.assign(size_t(context_len) * d_s, 0.0);
  w.actions.assign(size_t(context_len) * d_a, 0.0);
  w.step_ids.assign(context_len, 0);
  w.valid.assign(context_len, 0);
  const int pad = context_len - w.valid_steps;
  for (int k = 0; k < w.valid_steps; ++k) {
    const Step& s = steps[k];
    if (int(s.state.size()) != d_s || int(s.action.size()) != d_a)
      throw std::invalid_argument("make_window: step dims do not match statistics");
    const int slot = pad + k;
    for (int i = 0; i < d_s; ++i)
      w.states[size_t(slot) * d_s + i] = (s.state[i] - stats.state_mean[i]) / stats.state_std[i];
    for (int i = 0; i < d_a; ++i)
      w.actions[size_t(slot) * d_a + i] =
          (s.action[i] - stats.action_mean[i]) / stats.action_std[i];
    w.step_ids[slot] = s.t;
    w.valid[slot] = 1;
  }
  w.raw_last_state = steps.back().state;
  return w;
}

std::vector<LayoutEntry> model_layout(const ModelConfig& cfg) {
  std::vector<LayoutEntry> out;
  size_t pos = 0;
  walk_tensors(cfg, [&](const std::string& name, size_t n) {
    out.push_back({name, pos, n});
    pos += n;
  });
  return out;
}

size_t model_param_count(const ModelConfig& cfg) {
  size_t pos = 0;
  walk_tensors(cfg, [&](const std::string&, size_t n) { pos += n; });
  return pos;
}

SequenceModel::SequenceModel(ModelConfig cfg) : cfg_(cfg) {
  if (cfg_.embed_dim <= 0 || cfg_.n_layer <= 0 || cfg_.n_head <= 0 || cfg_.context_len <= 0 ||
      cfg_.max_step <= 0 || cfg_.d_s <= 0 || cfg_.d_a <= 0)
    throw std::invalid_argument("SequenceModel: config fields must be positive");
  if (cfg_.embed_dim % cfg_.n_head != 0)
    throw std::invalid_argument("SequenceModel: embed_dim must be divisible by n_head");
  params_.assign(model_param_count(cfg_), 0.0);
}

void SequenceModel::init_params(uint64_t seed) {
  Rng rng = derive_rng(seed, "init");
  size_t pos = 0;
  walk_tensors(cfg_, [&](const std::string& name, size_t n) {
    const bool is_ln_gain = name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "lnf_g";
    const bool is_bias = name.ends_with("_b") && !name.ends_with("w");
    for (size_t i = 0; i < n; ++i) {
      if (is_ln_gain)
        params_[pos + i] = 1.0;
      else if (is_bias)
        params_[pos + i] = 0.0;
      else
        params_[pos + i] = rng.gaussian(0.0, 0.02);
    }
    pos += n;
  });
}

std::vector<double> SequenceModel::forward(const TokenWindow& w) const {
  thread_local Workspace ws;
  const Offs off = make_offs(cfg_);
  window_pass(*this, off, w, nullptr, nullptr, false, 0, nullptr, ws);
  return ws.preds;
}

std::vector<double> SequenceModel::predict_last(const TokenWindow& w) const {
  std::vector<double> all = forward(w);
  const int out = cfg_.out_dim();
  return std::vector<double>(all.begin() + size_t(cfg_.context_len - 1) * out, all.end());
}

double loss_mse(std::span<const double> pred, std::span<const double> target,
                std::span<const uint8_t> mask, int dim) {
  if (pred.size() != target.size() || dim <= 0 || pred.size() % size_t(dim) != 0 ||
      mask.size() != pred.size() / size_t(dim))
    throw std::invalid_argument("loss_mse: shape mismatch");
  size_t n = 0;
  double acc = 0.0;
  for (size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    ++n;
    for (int i = 0; i < dim; ++i) {
      double r = pred[p * dim + i] - target[p * dim + i];
      acc += r * r;
    }
  }
  if (n == 0) throw std::invalid_argument("loss_mse: no unmasked positions");
  return acc / (double(n) * dim);
}

double batch_gradient(const SequenceModel& m, std::span<const WindowExample> batch,
                      bool train_mode, uint64_t dropout_seed, std::vector<double>& grad) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  const Offs off = make_offs(m.config());
  grad.assign(m.params().size(), 0.0);

  const size_t B = batch.size();
  const int n_chunks = int(std::min<size_t>(kGradChunks, B));
  std::vector<std::vector<double>> chunk_grad(n_chunks);
  std::vector<double> chunk_loss(n_chunks, 0.0);
  std::vector<std::exception_ptr> chunk_err(n_chunks);

  auto run_chunk = [&](int ci) {
    try {
      Workspace ws;
      auto& g = chunk_grad[ci];
      g.assign(m.params().size(), 0.0);
      const size_t lo = B * ci / n_chunks, hi = B * (ci + 1) / n_chunks;
      for (size_t b = lo; b < hi; ++b) {
        const WindowExample& ex = batch[b];
        chunk_loss[ci] += window_pass(m, off, ex.window, ex.targets.data(), ex.target_mask.data(),
                                      train_mode, derive_seed(dropout_seed, "win", b), g.data(),
                                      ws);
      }
    } catch (...) {
      chunk_err[ci] = std::current_exception();
    }
  };

  const int n_threads = int(std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                                               unsigned(n_chunks)));
  if (n_threads <= 1) {
    for (int ci = 0; ci < n_chunks; ++ci) run_chunk(ci);
  } else {
    std::vector<std::thread> pool;
    for (int tid = 0; tid < n_threads; ++tid)
      pool.emplace_back([&, tid] {
        for (int ci = tid; ci < n_chunks; ci += n_threads) run_chunk(ci);
      });
    for (auto& t : pool) t.join();
  }
  // fixed-order reduction keeps results independent of thread count
  double loss = 0.0;
  for (int ci = 0; ci < n_chunks; ++ci) {
    if (chunk_err[ci]) std::rethrow_exception(chunk_err[ci]);
    loss += chunk_loss[ci];
    const auto& g = chunk_grad[ci];
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  const double inv_b = 1.0 / double(B);
  for (auto& g : grad) g *= inv_b;
  return loss * inv_b;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"n_layer", c.n_layer},
              {"n_head", c.n_head},
              {"dropout", c.dropout},
              {"max_step", c.max_step},
              {"context_len", c.context_len},
              {"head", c.head == HeadKind::state ? "state" : "reward"},
              {"d_s", c.d_s},
              {"d_a", c.d_a}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_layer = j.at("n_layer").get<int>();
  c.n_head = j.at("n_head").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_step = j.at("max_step").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.head = j.at("head").get<std::string>() == "reward" ? HeadKind::reward : HeadKind::state;
  c.d_s = j.at("d_s").get<int>();
  c.d_a = j.at("d_a").get<int>();
  return c;
}

}  // namespace

void save_model(const SequenceModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json layout = json::array();
  for (const auto& ent : model_layout(m.config()))
    layout.push_back({{"name", ent.name}, {"offset", ent.offset}, {"size", ent.size}});
  json meta{{"format_version", 1}, {"config", config_to_json(m.config())}, {"layout", layout}};
  std::ofstream mf(dir / "model.json");
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("save_model: cannot write model.json");
  std::ofstream wf(dir / "weights.bin", std::ios::binary);
  wf.write(reinterpret_cast<const char*>(m.params().data()),
           std::streamsize(m.params().size() * sizeof(double)));
  if (!wf) throw std::runtime_error("save_model: cannot write weights.bin");
}

SequenceModel load_model(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "model.json");
  if (!mf) throw std::runtime_error("load_model: missing model.json in " + dir.string());
  json meta;
  mf >> meta;
  if (meta.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_model: unsupported format_version");
  SequenceModel m(config_from_json(meta.at("config")));
  std::ifstream wf(dir / "weights.bin", std::ios::binary | std::ios::ate);
  if (!wf) throw std::runtime_error("load_model: missing weights.bin");
  const size_t bytes = size_t(wf.tellg());
  if (bytes != m.params().size() * sizeof(double))
    throw std::runtime_error("load_model: weights.bin size does not match config layout");
  wf.seekg(0);
  wf.read(reinterpret_cast<char*>(m.params().data()), std::streamsize(bytes));
  if (!wf) throw std::runtime_error("load_model: short read on weights.bin");
  return m;
}

}  // namespace otto
