#include "anchorpheno/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "anchorpheno/metrics.hpp"
#include "anchorpheno/prng.hpp"

namespace anchorpheno {

namespace {

constexpr double kMaskValue = -1e4;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// y = gamma .* xhat + beta, normalizing each row of x. xhat and invstd are
// cached for the backward pass.
void layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma,
                const Eigen::VectorXd& beta, double eps, Eigen::MatrixXd* y,
                Eigen::MatrixXd* xhat, Eigen::VectorXd* invstd) {
    const Eigen::Index n = x.rows(), d = x.cols();
    y->resize(n, d);
    xhat->resize(n, d);
    invstd->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().sum() / static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[i] = is;
        xhat->row(i) = (x.row(i).array() - mu) * is;
        y->row(i) =
            (xhat->row(i).array() * gamma.transpose().array()) + beta.transpose().array();
    }
}

void layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                         const Eigen::VectorXd& invstd, const Eigen::VectorXd& gamma,
                         Eigen::MatrixXd* dx, Eigen::Map<Eigen::MatrixXd> dgamma,
                         Eigen::Map<Eigen::MatrixXd> dbeta) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    dx->resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::ArrayXd dxhat = dy.row(i).transpose().array() * gamma.array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat.row(i).transpose().array()).mean();
        dx->row(i) =
            ((dxhat - m1 - xhat.row(i).transpose().array() * m2) * invstd[i]).transpose();
    }
    dgamma.col(0) += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
    dbeta.col(0) += dy.colwise().sum().transpose();
}

// Inverted-dropout scale mask: entries are 0 (dropped) or 1/(1-p). Drawing
// order is fixed (column-major) so training is reproducible.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p,
                             std::mt19937_64& eng) {
    Eigen::MatrixXd m(rows, cols);
    const double scale = 1.0 / (1.0 - p);
    const uint64_t thresh = static_cast<uint64_t>(p * 18446744073709551616.0);  // p * 2^64
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = eng() < thresh ? 0.0 : scale;
    return m;
}

struct LayerCache {
    Eigen::MatrixXd in;       // layer input, (B*L) x D
    Eigen::MatrixXd q, k, v;  // projections, (B*L) x D
    std::vector<Eigen::MatrixXd> probs;       // attention rows, one L x L per (seq, head)
    std::vector<Eigen::MatrixXd> probs_mask;  // dropout scale masks; empty in eval
    Eigen::MatrixXd ctx;                      // concatenated head outputs
    Eigen::MatrixXd attn_drop;                // empty in eval
    Eigen::MatrixXd xhat1;
    Eigen::VectorXd invstd1;
    Eigen::MatrixXd x1;  // post-attention layer norm output
    Eigen::MatrixXd u;   // feed-forward pre-activation, (B*L) x F
    Eigen::MatrixXd ffn_drop;
    Eigen::MatrixXd xhat2;
    Eigen::VectorXd invstd2;
};

struct BatchCache {
    Eigen::Index B = 0, L = 0;
    Eigen::MatrixXd emb_xhat;
    Eigen::VectorXd emb_invstd;
    Eigen::MatrixXd emb_drop;
    std::vector<LayerCache> layers;
    Eigen::MatrixXd cls;  // rows used by the head (post-dropout)
    Eigen::MatrixXd cls_drop;
    Eigen::VectorXd logits;
};

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

Eigen::VectorXd run_forward(const TransformerModel& m,
                            const std::vector<const EncodedSequence*>& seqs,
                            const std::vector<const Eigen::VectorXd*>& masks, bool training,
                            std::mt19937_64* eng, BatchCache& cache) {
    const TransformerConfig& c = m.config;
    const Eigen::Index B = static_cast<Eigen::Index>(seqs.size());
    const Eigen::Index L = c.max_len, D = c.d_model, H = c.n_heads;
    const Eigen::Index dh = D / H, N = B * L, F = c.intermediate_size;
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    if (masks.size() != seqs.size()) throw std::invalid_argument("forward: mask count mismatch");
    cache.B = B;
    cache.L = L;

    const bool hidden_do = training && c.hidden_dropout > 0.0;
    const bool attn_do = training && c.attention_dropout > 0.0;

    Eigen::MatrixXd E(N, D);
    {
        auto tok = m.tensor("tok_emb");
        auto pos = m.tensor("pos_emb");
        auto seg = m.tensor("seg_emb");
        for (Eigen::Index b = 0; b < B; ++b) {
            const EncodedSequence& s = *seqs[b];
            if (static_cast<Eigen::Index>(s.token_ids.size()) != L)
                throw std::invalid_argument("forward: sequence length does not match max_len");
            if (masks[b]->size() != L)
                throw std::invalid_argument("forward: mask length does not match max_len");
            for (Eigen::Index l = 0; l < L; ++l) {
                const int tid = s.token_ids[l], pid = s.position_ids[l], gid = s.segment_ids[l];
                if (tid < 0 || tid >= c.vocab_size)
                    throw std::out_of_range("forward: token id outside vocabulary");
                if (pid < 0 || pid >= c.max_len)
                    throw std::out_of_range("forward: position id outside table");
                if (gid < 0 || gid >= 2)
                    throw std::out_of_range("forward: segment id outside table");
                E.row(b * L + l) = tok.row(tid) + pos.row(pid) + seg.row(gid);
            }
        }
    }

    Eigen::MatrixXd x;
    layer_norm(E, m.tensor("emb_ln_g").col(0), m.tensor("emb_ln_b").col(0), c.ln_eps, &x,
               &cache.emb_xhat, &cache.emb_invstd);
    if (hidden_do) {
        cache.emb_drop = dropout_mask(N, D, c.hidden_dropout, *eng);
        x = x.cwiseProduct(cache.emb_drop);
    }

    cache.layers.assign(static_cast<size_t>(c.n_layers), LayerCache{});
    for (int l = 0; l < c.n_layers; ++l) {
        LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const std::string p = layer_prefix(l);
        lc.in = std::move(x);

        lc.q = lc.in * m.tensor(p + "wq");
        lc.q.rowwise() += m.tensor(p + "bq").col(0).transpose();
        lc.k = lc.in * m.tensor(p + "wk");
        lc.k.rowwise() += m.tensor(p + "bk").col(0).transpose();
        lc.v = lc.in * m.tensor(p + "wv");
        lc.v.rowwise() += m.tensor(p + "bv").col(0).transpose();

        lc.ctx.resize(N, D);
        lc.probs.assign(static_cast<size_t>(B * H), Eigen::MatrixXd());
        if (attn_do) lc.probs_mask.assign(static_cast<size_t>(B * H), Eigen::MatrixXd());
        for (Eigen::Index b = 0; b < B; ++b) {
            for (Eigen::Index h = 0; h < H; ++h) {
                const size_t slot = static_cast<size_t>(b * H + h);
                lc.probs[slot] = attention_probs(lc.q.block(b * L, h * dh, L, dh),
                                                 lc.k.block(b * L, h * dh, L, dh), *masks[b]);
                if (attn_do) {
                    lc.probs_mask[slot] = dropout_mask(L, L, c.attention_dropout, *eng);
                    lc.ctx.block(b * L, h * dh, L, dh) =
                        lc.probs[slot].cwiseProduct(lc.probs_mask[slot]) *
                        lc.v.block(b * L, h * dh, L, dh);
                } else {
                    lc.ctx.block(b * L, h * dh, L, dh) =
                        lc.probs[slot] * lc.v.block(b * L, h * dh, L, dh);
                }
            }
        }

        Eigen::MatrixXd attn = lc.ctx * m.tensor(p + "wo");
        attn.rowwise() += m.tensor(p + "bo").col(0).transpose();
        if (hidden_do) {
            lc.attn_drop = dropout_mask(N, D, c.hidden_dropout, *eng);
            attn = attn.cwiseProduct(lc.attn_drop);
        }

        const Eigen::MatrixXd r1 = lc.in + attn;
        layer_norm(r1, m.tensor(p + "ln1_g").col(0), m.tensor(p + "ln1_b").col(0), c.ln_eps,
                   &lc.x1, &lc.xhat1, &lc.invstd1);

        lc.u = lc.x1 * m.tensor(p + "w1");
        lc.u.rowwise() += m.tensor(p + "b1").col(0).transpose();
        Eigen::MatrixXd ffn = lc.u.unaryExpr(&gelu) * m.tensor(p + "w2");
        ffn.rowwise() += m.tensor(p + "b2").col(0).transpose();
        if (hidden_do) {
            lc.ffn_drop = dropout_mask(N, D, c.hidden_dropout, *eng);
            ffn = ffn.cwiseProduct(lc.ffn_drop);
        }

        const Eigen::MatrixXd r2 = lc.x1 + ffn;
        Eigen::MatrixXd x2;
        layer_norm(r2, m.tensor(p + "ln2_g").col(0), m.tensor(p + "ln2_b").col(0), c.ln_eps, &x2,
                   &lc.xhat2, &lc.invstd2);
        x = std::move(x2);
    }

    cache.cls.resize(B, D);
    for (Eigen::Index b = 0; b < B; ++b) cache.cls.row(b) = x.row(b * L);  // [CLS] is row 0
    if (hidden_do) {
        cache.cls_drop = dropout_mask(B, D, c.hidden_dropout, *eng);
        cache.cls = cache.cls.cwiseProduct(cache.cls_drop);
    }
    cache.logits =
        (cache.cls * m.tensor("head_w")).col(0).array() + m.tensor("head_b")(0, 0);
    return cache.logits;
}

void run_backward(const TransformerModel& m, const std::vector<const EncodedSequence*>& seqs,
                  const BatchCache& cache, const Eigen::VectorXd& dlogits,
                  Eigen::VectorXd* flat_grad) {
    const TransformerConfig& c = m.config;
    const Eigen::Index B = cache.B, L = cache.L, D = c.d_model, H = c.n_heads;
    const Eigen::Index dh = D / H, N = B * L;

    flat_grad->setZero(m.layout.total);
    auto G = [&](const std::string& name) -> Eigen::Map<Eigen::MatrixXd> {
        const TensorSpec& t = m.layout.find(name);
        return {flat_grad->data() + t.offset, t.rows, t.cols};
    };

    // classification head
    G("head_w").col(0) += cache.cls.transpose() * dlogits;
    G("head_b")(0, 0) += dlogits.sum();
    Eigen::MatrixXd dcls = dlogits * m.tensor("head_w").col(0).transpose();  // B x D
    if (cache.cls_drop.size()) dcls = dcls.cwiseProduct(cache.cls_drop);

    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(N, D);
    for (Eigen::Index b = 0; b < B; ++b) dx.row(b * L) += dcls.row(b);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = c.n_layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const std::string p = layer_prefix(l);

        Eigen::MatrixXd dr2;
        layer_norm_backward(dx, lc.xhat2, lc.invstd2, m.tensor(p + "ln2_g").col(0), &dr2,
                            G(p + "ln2_g"), G(p + "ln2_b"));

        Eigen::MatrixXd dx1 = dr2;  // residual branch
        Eigen::MatrixXd dffn = std::move(dr2);
        if (lc.ffn_drop.size()) dffn = dffn.cwiseProduct(lc.ffn_drop);

        const Eigen::MatrixXd gact = lc.u.unaryExpr(&gelu);
        G(p + "w2") += gact.transpose() * dffn;
        G(p + "b2").col(0) += dffn.colwise().sum().transpose();
        const Eigen::MatrixXd du =
            (dffn * m.tensor(p + "w2").transpose()).cwiseProduct(lc.u.unaryExpr(&gelu_grad));
        G(p + "w1") += lc.x1.transpose() * du;
        G(p + "b1").col(0) += du.colwise().sum().transpose();
        dx1 += du * m.tensor(p + "w1").transpose();

        Eigen::MatrixXd dr1;
        layer_norm_backward(dx1, lc.xhat1, lc.invstd1, m.tensor(p + "ln1_g").col(0), &dr1,
                            G(p + "ln1_g"), G(p + "ln1_b"));

        Eigen::MatrixXd din = dr1;  // residual branch
        Eigen::MatrixXd dattn = std::move(dr1);
        if (lc.attn_drop.size()) dattn = dattn.cwiseProduct(lc.attn_drop);

        G(p + "wo") += lc.ctx.transpose() * dattn;
        G(p + "bo").col(0) += dattn.colwise().sum().transpose();
        const Eigen::MatrixXd dctx = dattn * m.tensor(p + "wo").transpose();

        Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(N, D);
        Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(N, D);
        Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(N, D);
        for (Eigen::Index b = 0; b < B; ++b) {
            for (Eigen::Index h = 0; h < H; ++h) {
                const size_t slot = static_cast<size_t>(b * H + h);
                const Eigen::MatrixXd& A = lc.probs[slot];
                const auto dOb = dctx.block(b * L, h * dh, L, dh);
                const auto Vb = lc.v.block(b * L, h * dh, L, dh);
                Eigen::MatrixXd dA = dOb * Vb.transpose();
                if (lc.probs_mask.empty()) {
                    dv.block(b * L, h * dh, L, dh) += A.transpose() * dOb;
                } else {
                    const Eigen::MatrixXd& pm = lc.probs_mask[slot];
                    dv.block(b * L, h * dh, L, dh) += A.cwiseProduct(pm).transpose() * dOb;
                    dA = dA.cwiseProduct(pm);
                }
                Eigen::MatrixXd dS(L, L);
                for (Eigen::Index r = 0; r < L; ++r) {
                    const double dot = dA.row(r).dot(A.row(r));
                    dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
                }
                dq.block(b * L, h * dh, L, dh) += dS * lc.k.block(b * L, h * dh, L, dh) * scale;
                dk.block(b * L, h * dh, L, dh) +=
                    dS.transpose() * lc.q.block(b * L, h * dh, L, dh) * scale;
            }
        }
        G(p + "wq") += lc.in.transpose() * dq;
        G(p + "bq").col(0) += dq.colwise().sum().transpose();
        G(p + "wk") += lc.in.transpose() * dk;
        G(p + "bk").col(0) += dk.colwise().sum().transpose();
        G(p + "wv") += lc.in.transpose() * dv;
        G(p + "bv").col(0) += dv.colwise().sum().transpose();
        din += dq * m.tensor(p + "wq").transpose() + dk * m.tensor(p + "wk").transpose() +
               dv * m.tensor(p + "wv").transpose();
        dx = std::move(din);
    }

    if (cache.emb_drop.size()) dx = dx.cwiseProduct(cache.emb_drop);
    Eigen::MatrixXd dE;
    layer_norm_backward(dx, cache.emb_xhat, cache.emb_invstd, m.tensor("emb_ln_g").col(0), &dE,
                        G("emb_ln_g"), G("emb_ln_b"));

    auto dtok = G("tok_emb");
    auto dpos = G("pos_emb");
    auto dseg = G("seg_emb");
    for (Eigen::Index b = 0; b < B; ++b) {
        const EncodedSequence& s = *seqs[b];
        for (Eigen::Index l = 0; l < L; ++l) {
            const Eigen::Index row = b * L + l;
            dtok.row(s.token_ids[l]) += dE.row(row);
            dpos.row(s.position_ids[l]) += dE.row(row);
            dseg.row(s.segment_ids[l]) += dE.row(row);
        }
    }
}

double bce_from_logits(const Eigen::VectorXd& logits, const std::vector<double>& targets,
                       Eigen::VectorXd* dlogits) {
    const Eigen::Index B = logits.size();
    if (static_cast<Eigen::Index>(targets.size()) != B)
        throw std::invalid_argument("loss: target count mismatch");
    double loss = 0.0;
    if (dlogits) dlogits->resize(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const double z = logits[b], y = targets[b];
        loss += softplus(z) - y * z;
        if (dlogits) (*dlogits)[b] = (sigmoid(z) - y) / static_cast<double>(B);
    }
    return loss / static_cast<double>(B);
}

std::vector<const EncodedSequence*> as_ptrs(const std::vector<EncodedSequence>& v) {
    std::vector<const EncodedSequence*> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = &v[i];
    return out;
}

std::vector<const Eigen::VectorXd*> as_ptrs(const std::vector<Eigen::VectorXd>& v) {
    std::vector<const Eigen::VectorXd*> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = &v[i];
    return out;
}

}  // namespace

TransformerConfig TransformerConfig::full_scale() {
    TransformerConfig c;
    c.max_len = 256;
    c.d_model = 360;
    c.n_layers = 2;
    c.n_heads = 12;
    c.intermediate_size = 512;
    c.batch_size = 256;
    return c;
}

void TransformerConfig::validate() const {
    if (vocab_size < 5)
        throw std::invalid_argument("transformer config: vocab_size must cover the specials");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw std::invalid_argument("transformer config: d_model must be divisible by n_heads");
    if (n_layers < 1) throw std::invalid_argument("transformer config: need >= 1 layer");
    if (intermediate_size < 1)
        throw std::invalid_argument("transformer config: intermediate_size must be positive");
    if (max_len < 4) throw std::invalid_argument("transformer config: max_len too small");
    if (!(hidden_dropout >= 0.0 && hidden_dropout < 1.0) ||
        !(attention_dropout >= 0.0 && attention_dropout < 1.0))
        throw std::invalid_argument("transformer config: dropouts must lie in [0, 1)");
    if (!(init_range > 0.0)) throw std::invalid_argument("transformer config: init_range <= 0");
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("transformer config: learning_rate <= 0");
    if (!(warmup_proportion >= 0.0 && warmup_proportion < 1.0))
        throw std::invalid_argument("transformer config: warmup_proportion must lie in [0, 1)");
    if (batch_size < 1 || n_epochs < 1)
        throw std::invalid_argument("transformer config: batch_size and n_epochs must be >= 1");
}

ParamLayout ParamLayout::build(const TransformerConfig& c) {
    ParamLayout lay;
    auto add = [&lay](const std::string& name, Eigen::Index r, Eigen::Index co, bool decay) {
        lay.tensors.push_back({name, r, co, lay.total, decay});
        lay.total += r * co;
    };
    const Eigen::Index D = c.d_model, F = c.intermediate_size;
    add("tok_emb", c.vocab_size, D, true);
    add("pos_emb", c.max_len, D, true);
    add("seg_emb", 2, D, true);
    add("emb_ln_g", D, 1, false);
    add("emb_ln_b", D, 1, false);
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        add(p + "wq", D, D, true);
        add(p + "bq", D, 1, false);
        add(p + "wk", D, D, true);
        add(p + "bk", D, 1, false);
        add(p + "wv", D, D, true);
        add(p + "bv", D, 1, false);
        add(p + "wo", D, D, true);
        add(p + "bo", D, 1, false);
        add(p + "ln1_g", D, 1, false);
        add(p + "ln1_b", D, 1, false);
        add(p + "w1", D, F, true);
        add(p + "b1", F, 1, false);
        add(p + "w2", F, D, true);
        add(p + "b2", D, 1, false);
        add(p + "ln2_g", D, 1, false);
        add(p + "ln2_b", D, 1, false);
    }
    add("head_w", D, 1, true);
    add("head_b", 1, 1, false);
    return lay;
}

const TensorSpec& ParamLayout::find(const std::string& name) const {
    for (const TensorSpec& t : tensors)
        if (t.name == name) return t;
    throw std::out_of_range("unknown parameter tensor: " + name);
}

TransformerModel TransformerModel::init(const TransformerConfig& config, uint64_t seed,
                                        uint64_t vocab_hash, bool zero_head) {
    TransformerModel m;
    m.config = config;
    m.config.validate();
    m.layout = ParamLayout::build(m.config);
    m.params = Eigen::VectorXd::Zero(m.layout.total);
    m.vocab_hash = vocab_hash;

    auto eng = make_engine(derive_seed(seed, "transformer-init"));
    std::normal_distribution<double> nd(0.0, config.init_range);
    // normal(0, init_range) truncated at two standard deviations
    auto draw = [&]() {
        double v;
        do {
            v = nd(eng);
        } while (std::abs(v) > 2.0 * config.init_range);
        return v;
    };

    for (const TensorSpec& t : m.layout.tensors) {
        if (!t.decay) {
            const double fill = t.name.size() >= 2 && t.name.compare(t.name.size() - 2, 2, "_g") == 0
                                    ? 1.0
                                    : 0.0;
            m.params.segment(t.offset, t.size()).setConstant(fill);
        } else if (t.name == "head_w" && zero_head) {
            m.params.segment(t.offset, t.size()).setZero();
        } else {
            for (Eigen::Index i = 0; i < t.size(); ++i) m.params[t.offset + i] = draw();
        }
    }
    return m;
}

Eigen::Map<Eigen::MatrixXd> TransformerModel::tensor(const std::string& name) {
    const TensorSpec& t = layout.find(name);
    return {params.data() + t.offset, t.rows, t.cols};
}

Eigen::Map<const Eigen::MatrixXd> TransformerModel::tensor(const std::string& name) const {
    const TensorSpec& t = layout.find(name);
    return {params.data() + t.offset, t.rows, t.cols};
}

Eigen::MatrixXd attention_probs(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                                const Eigen::VectorXd& mask) {
    if (Q.cols() != K.cols())
        throw std::invalid_argument("attention: query/key width mismatch");
    if (mask.size() != K.rows()) throw std::invalid_argument("attention: mask length mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
    Eigen::MatrixXd s = Q * K.transpose() * scale;
    s.rowwise() += mask.transpose();
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
    return s;
}

Eigen::MatrixXd attention(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                          const Eigen::MatrixXd& V, const Eigen::VectorXd& mask) {
    if (V.rows() != K.rows()) throw std::invalid_argument("attention: key/value row mismatch");
    return attention_probs(Q, K, mask) * V;
}

std::vector<int> anchor_token_ids(const Vocabulary& vocab, const AnchorSpec& anchor) {
    std::vector<int> ids;
    for (const std::string& code : anchor.codes) {
        if (!vocab.contains(code))
            throw std::invalid_argument("anchor code not in vocabulary: " + code);
        ids.push_back(vocab.token_id(code));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

Eigen::VectorXd build_anchor_mask(const EncodedSequence& seq,
                                  const std::vector<int>& anchor_ids) {
    const Eigen::Index L = static_cast<Eigen::Index>(seq.token_ids.size());
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(L);
    for (Eigen::Index l = 0; l < L; ++l) {
        if (!seq.valid[l] ||
            std::binary_search(anchor_ids.begin(), anchor_ids.end(), seq.token_ids[l]))
            mask[l] = kMaskValue;
    }
    return mask;
}

Eigen::VectorXd build_pad_mask(const EncodedSequence& seq) {
    return build_anchor_mask(seq, {});
}

double forward_logit(const TransformerModel& model, const EncodedSequence& seq,
                     const Eigen::VectorXd& mask) {
    BatchCache cache;
    const Eigen::VectorXd logits =
        run_forward(model, {&seq}, {&mask}, /*training=*/false, nullptr, cache);
    return logits[0];
}

double loss_and_gradient(const TransformerModel& model,
                         const std::vector<EncodedSequence>& seqs,
                         const std::vector<Eigen::VectorXd>& masks,
                         const std::vector<double>& targets, Eigen::VectorXd* grad) {
    BatchCache cache;
    const auto sp = as_ptrs(seqs);
    const auto mp = as_ptrs(masks);
    const Eigen::VectorXd logits = run_forward(model, sp, mp, false, nullptr, cache);
    Eigen::VectorXd dlogits;
    const double loss = bce_from_logits(logits, targets, grad ? &dlogits : nullptr);
    if (!std::isfinite(loss)) throw std::runtime_error("loss is not finite");
    if (grad) run_backward(model, sp, cache, dlogits, grad);
    return loss;
}

GradCheckResult gradient_check(const TransformerModel& model, const EncodedSequence& seq,
                               const Eigen::VectorXd& mask, double target, double eps,
                               int per_tensor, uint64_t seed) {
    TransformerModel work = model;
    const std::vector<EncodedSequence> seqs = {seq};
    const std::vector<Eigen::VectorXd> masks = {mask};
    const std::vector<double> targets = {target};

    Eigen::VectorXd analytic;
    loss_and_gradient(work, seqs, masks, targets, &analytic);

    GradCheckResult res;
    for (const TensorSpec& t : work.layout.tensors) {
        auto eng = make_engine(derive_seed(seed, t.name));
        std::vector<Eigen::Index> picks;
        if (t.size() <= per_tensor) {
            for (Eigen::Index i = 0; i < t.size(); ++i) picks.push_back(i);
        } else {
            std::set<Eigen::Index> chosen;
            std::uniform_int_distribution<Eigen::Index> dist(0, t.size() - 1);
            while (static_cast<int>(chosen.size()) < per_tensor) chosen.insert(dist(eng));
            picks.assign(chosen.begin(), chosen.end());
        }
        for (const Eigen::Index local : picks) {
            const Eigen::Index j = t.offset + local;
            const double saved = work.params[j];
            work.params[j] = saved + eps;
            const double lp = loss_and_gradient(work, seqs, masks, targets, nullptr);
            work.params[j] = saved - eps;
            const double lm = loss_and_gradient(work, seqs, masks, targets, nullptr);
            work.params[j] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double g = analytic[j];
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-8});
            const double rel = std::abs(g - numeric) / denom;
            ++res.n_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_tensor = t.name;
                res.worst_index = local;
            }
        }
    }
    return res;
}

TrainResult train_transformer(const std::vector<PatientRecord>& records,
                              const AnchorLabel& labels, const Vocabulary& vocab,
                              const AnchorSpec& anchor, const TransformerConfig& config,
                              const std::vector<size_t>& train_idx,
                              const std::vector<size_t>& valid_idx) {
    if (labels.s.size() != records.size())
        throw std::invalid_argument("train: label count does not match records");
    if (train_idx.empty()) throw std::invalid_argument("train: empty training split");
    if (valid_idx.empty()) throw std::invalid_argument("train: empty validation split");
    for (size_t i : train_idx)
        if (i >= records.size()) throw std::out_of_range("train: training index out of range");
    for (size_t i : valid_idx)
        if (i >= records.size()) throw std::out_of_range("train: validation index out of range");
    size_t train_pos = 0, valid_pos = 0;
    for (size_t i : train_idx) train_pos += labels.s[i];
    for (size_t i : valid_idx) valid_pos += labels.s[i];
    if (train_pos == 0) throw std::invalid_argument("train: no positives in training labels");
    if (valid_pos == 0) throw std::invalid_argument("train: no positives in validation labels");

    TransformerConfig cfg = config;
    cfg.vocab_size = vocab.size();
    const std::vector<int> anchor_ids = anchor_token_ids(vocab, anchor);

    // encode once; sequences and masks are training-invariant
    std::vector<EncodedSequence> encoded(records.size());
    std::vector<Eigen::VectorXd> enc_masks(records.size());
    std::vector<char> have(records.size(), 0);
    auto ensure = [&](size_t i) {
        if (have[i]) return;
        encoded[i] = encode_record(records[i], vocab, cfg.max_len);
        enc_masks[i] = build_anchor_mask(encoded[i], anchor_ids);
        have[i] = 1;
    };
    for (size_t i : train_idx) ensure(i);
    for (size_t i : valid_idx) ensure(i);

    TransformerModel model = TransformerModel::init(cfg, cfg.seed, vocab.hash());

    const Eigen::Index n_params = model.layout.total;
    Eigen::VectorXd decay_flags = Eigen::VectorXd::Zero(n_params);
    for (const TensorSpec& t : model.layout.tensors)
        if (t.decay) decay_flags.segment(t.offset, t.size()).setOnes();

    Eigen::VectorXd mom = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd vel = Eigen::VectorXd::Zero(n_params);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-6;

    const size_t n_train = train_idx.size();
    const size_t batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(batches_per_epoch) * cfg.n_epochs;

    auto dropout_eng = make_engine(derive_seed(cfg.seed, "dropout"));

    TrainResult result;
    Eigen::VectorXd best_params = model.params;
    long step = 0;

    std::vector<size_t> order(train_idx);
    for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
        auto shuffle_eng = make_engine(derive_seed(cfg.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), shuffle_eng);

        double epoch_loss = 0.0;
        for (size_t start = 0; start < n_train; start += cfg.batch_size) {
            const size_t stop = std::min(n_train, start + cfg.batch_size);
            std::vector<const EncodedSequence*> bseqs;
            std::vector<const Eigen::VectorXd*> bmasks;
            std::vector<double> btargets;
            bseqs.reserve(stop - start);
            for (size_t r = start; r < stop; ++r) {
                const size_t i = order[r];
                bseqs.push_back(&encoded[i]);
                bmasks.push_back(&enc_masks[i]);
                btargets.push_back(static_cast<double>(labels.s[i]));
            }

            BatchCache cache;
            const Eigen::VectorXd logits =
                run_forward(model, bseqs, bmasks, true, &dropout_eng, cache);
            Eigen::VectorXd dlogits;
            const double loss = bce_from_logits(logits, btargets, &dlogits);
            if (!std::isfinite(loss)) throw std::runtime_error("train: loss diverged");
            epoch_loss += loss * static_cast<double>(stop - start);

            Eigen::VectorXd grad;
            run_backward(model, bseqs, cache, dlogits, &grad);

            const double gnorm = grad.norm();
            if (gnorm > 1.0) grad *= 1.0 / gnorm;  // global clip at norm 1

            // Adam moments without bias correction, decoupled weight decay,
            // linear warmup then linear decay evaluated at the step midpoint.
            ++step;
            const double progress = (static_cast<double>(step) - 0.5) / total_steps;
            const double sched = progress < cfg.warmup_proportion
                                     ? progress / cfg.warmup_proportion
                                     : (1.0 - progress) / (1.0 - cfg.warmup_proportion);
            const double lr_t = cfg.learning_rate * std::max(0.0, sched);
            mom = kBeta1 * mom + (1.0 - kBeta1) * grad;
            vel = kBeta2 * vel + (1.0 - kBeta2) * grad.cwiseAbs2();
            Eigen::VectorXd update =
                (mom.array() / (vel.array().sqrt() + kAdamEps)).matrix() +
                cfg.weight_decay * decay_flags.cwiseProduct(model.params);
            model.params -= lr_t * update;
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(n_train));

        // validation: eval mode, average precision against the provided labels
        std::vector<double> vscores;
        std::vector<uint8_t> vlabels;
        vscores.reserve(valid_idx.size());
        for (size_t start = 0; start < valid_idx.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop =
                std::min(valid_idx.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<const EncodedSequence*> bseqs;
            std::vector<const Eigen::VectorXd*> bmasks;
            for (size_t r = start; r < stop; ++r) {
                bseqs.push_back(&encoded[valid_idx[r]]);
                bmasks.push_back(&enc_masks[valid_idx[r]]);
            }
            BatchCache cache;
            const Eigen::VectorXd logits = run_forward(model, bseqs, bmasks, false, nullptr, cache);
            for (Eigen::Index b = 0; b < logits.size(); ++b) vscores.push_back(sigmoid(logits[b]));
        }
        for (size_t i : valid_idx) vlabels.push_back(labels.s[i]);
        const double ap = average_precision(vscores, vlabels);
        result.valid_ap.push_back(ap);
        if (ap > result.best_valid_ap || result.best_epoch < 0) {
            result.best_valid_ap = ap;
            result.best_epoch = epoch;
            best_params = model.params;
        }
    }

    model.params = std::move(best_params);
    result.model = std::move(model);
    return result;
}

std::vector<double> predict_transformer(const TransformerModel& model,
                                        const std::vector<PatientRecord>& records,
                                        const Vocabulary& vocab, const AnchorSpec& anchor) {
    if (model.vocab_hash != vocab.hash())
        throw std::runtime_error(
            "predict: vocabulary does not match the one the model was trained with");
    std::vector<double> out;
    if (records.empty()) return out;
    const std::vector<int> anchor_ids = anchor_token_ids(vocab, anchor);

    const size_t chunk = static_cast<size_t>(model.config.batch_size);
    std::vector<EncodedSequence> seqs;
    std::vector<Eigen::VectorXd> masks;
    for (size_t start = 0; start < records.size(); start += chunk) {
        const size_t stop = std::min(records.size(), start + chunk);
        seqs.clear();
        masks.clear();
        for (size_t i = start; i < stop; ++i) {
            seqs.push_back(encode_record(records[i], vocab, model.config.max_len));
            masks.push_back(build_anchor_mask(seqs.back(), anchor_ids));
        }
        BatchCache cache;
        const Eigen::VectorXd logits =
            run_forward(model, as_ptrs(seqs), as_ptrs(masks), false, nullptr, cache);
        for (Eigen::Index b = 0; b < logits.size(); ++b) out.push_back(sigmoid(logits[b]));
    }
    return out;
}

std::string save_transformer(const TransformerModel& model) {
    nlohmann::json j;
    j["kind"] = "anchorbert";
    j["vocab_hash"] = model.vocab_hash;
    nlohmann::json jc;
    const TransformerConfig& c = model.config;
    jc["vocab_size"] = c.vocab_size;
    jc["max_len"] = c.max_len;
    jc["d_model"] = c.d_model;
    jc["n_layers"] = c.n_layers;
    jc["n_heads"] = c.n_heads;
    jc["intermediate_size"] = c.intermediate_size;
    jc["hidden_dropout"] = c.hidden_dropout;
    jc["attention_dropout"] = c.attention_dropout;
    jc["init_range"] = c.init_range;
    jc["ln_eps"] = c.ln_eps;
    jc["learning_rate"] = c.learning_rate;
    jc["warmup_proportion"] = c.warmup_proportion;
    jc["weight_decay"] = c.weight_decay;
    jc["batch_size"] = c.batch_size;
    jc["n_epochs"] = c.n_epochs;
    jc["seed"] = c.seed;
    j["config"] = jc;
    j["params"] = std::vector<double>(model.params.data(),
                                      model.params.data() + model.params.size());
    return j.dump();
}

TransformerModel load_transformer(const std::string& text, const Vocabulary* vocab) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("kind") != "anchorbert")
        throw std::runtime_error("load_transformer: wrong model kind");
    TransformerConfig c;
    const auto& jc = j.at("config");
    c.vocab_size = jc.at("vocab_size").get<int>();
    c.max_len = jc.at("max_len").get<int>();
    c.d_model = jc.at("d_model").get<int>();
    c.n_layers = jc.at("n_layers").get<int>();
    c.n_heads = jc.at("n_heads").get<int>();
    c.intermediate_size = jc.at("intermediate_size").get<int>();
    c.hidden_dropout = jc.at("hidden_dropout").get<double>();
    c.attention_dropout = jc.at("attention_dropout").get<double>();
    c.init_range = jc.at("init_range").get<double>();
    c.ln_eps = jc.at("ln_eps").get<double>();
    c.learning_rate = jc.at("learning_rate").get<double>();
    c.warmup_proportion = jc.at("warmup_proportion").get<double>();
    c.weight_decay = jc.at("weight_decay").get<double>();
    c.batch_size = jc.at("batch_size").get<int>();
    c.n_epochs = jc.at("n_epochs").get<int>();
    c.seed = jc.at("seed").get<uint64_t>();

    TransformerModel m;
    m.config = c;
    m.config.validate();
    m.layout = ParamLayout::build(c);
    m.vocab_hash = j.at("vocab_hash").get<uint64_t>();
    if (vocab && vocab->hash() != m.vocab_hash)
        throw std::runtime_error("load_transformer: vocabulary hash mismatch");
    const auto vals = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(vals.size()) != m.layout.total)
        throw std::runtime_error("load_transformer: parameter count mismatch");
    m.params =
        Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    return m;
}

}  // namespace anchorpheno
