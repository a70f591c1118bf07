// Acceptance suite: one pass/fail line per criterion, exit code 0 only if
// everything passes. Tolerances are pinned in the checks themselves.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hashlat/align_net.hpp"
#include "hashlat/attack.hpp"
#include "hashlat/core/rng.hpp"
#include "hashlat/diffusion.hpp"
#include "hashlat/experiments.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/hash_space.hpp"

using namespace hashlat;

namespace {

struct Failure {
    std::string what;
};

std::vector<std::string> g_notes;

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure{what};
}

void note(const std::string& s) { g_notes.push_back(s); }

// Shared default-scale artifacts, trained once and reused where a criterion
// calls for "the default toy config".
struct SharedContext {
    ExperimentConfig cfg;
    DatasetBundle bundle;
    CaptionSet captions;
    HashModelParams model;
    HANParams han;
    ToyDiffusionBackend backend{BackendConfig{}};
    LatentPooler pooler;
    bool ready = false;

    void build() {
        if (ready) return;
        cfg = ExperimentConfig::defaults();
        bundle = stage_gen_data(cfg, "");
        captions = stage_captions(cfg, bundle, "");
        model = stage_train_hash(cfg, bundle, "");
        han = stage_train_align(cfg, bundle, model, captions, "");
        auto [b, p] = stage_fit_backend(cfg, bundle, captions, "");
        backend = std::move(b);
        pooler = std::move(p);
        ready = true;
    }
};

SharedContext g_ctx;

// ---------------------------------------------------------------------------
// Criterion 1: loss-oracle equivalence on 100 random small inputs each.

void criterion_loss_oracles() {
    Rng rng(1001);
    const double tol = 1e-10;

    for (int trial = 0; trial < 100; ++trial) {
        const int64_t n = 1 + trial % 5;
        const int64_t k = 2 + trial % 7;

        // batches in (-1,1) plus exact +-1 codes
        Tensor bt({n, k}), b_img({n, k}), tf({n, k + 1}), if_feat({n, k + 1});
        for (auto& v : bt.vec()) v = rng.uniform(-0.999, 0.999);
        for (auto& v : b_img.vec()) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (auto& v : tf.vec()) v = rng.normal() + 0.1;
        for (auto& v : if_feat.vec()) v = rng.normal() + 0.1;

        {  // quantization: (1/N) sum_i ||(|b_i| - 1)||_2
            double expect = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                double sq = 0.0;
                for (int64_t j = 0; j < k; ++j) {
                    double dev = std::fabs(bt[i * k + j]) - 1.0;
                    sq += dev * dev;
                }
                expect += std::sqrt(sq);
            }
            expect /= static_cast<double>(n);
            require(std::fabs(loss_quan(bt) - expect) < tol, "loss_quan oracle mismatch");
        }
        {  // hamming alignment: (1/N) sum_i sum_j |b - c|
            double expect = 0.0;
            for (int64_t i = 0; i < n * k; ++i) expect += std::fabs(bt[i] - b_img[i]);
            expect /= static_cast<double>(n);
            require(std::fabs(loss_ham(bt, b_img) - expect) < tol, "loss_ham oracle mismatch");
        }
        {  // direction: 1 - mean cosine
            double mean_cos = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                double dot = 0, na = 0, nb = 0;
                for (int64_t j = 0; j < k + 1; ++j) {
                    double a = tf[i * (k + 1) + j], b = if_feat[i * (k + 1) + j];
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                mean_cos += dot / (std::sqrt(na) * std::sqrt(nb));
            }
            double expect = 1.0 - mean_cos / static_cast<double>(n);
            require(std::fabs(loss_direct(tf, if_feat) - expect) < tol,
                    "loss_direct oracle mismatch");
        }
        {  // path: L1 + hinge
            TextGuideVector t(std::vector<double>(bt.data(), bt.data() + k));
            std::vector<double> z(b_img.data(), b_img.data() + k);
            double margin = rng.uniform(-2.0, 2.0) * static_cast<double>(k) * 0.2;
            double l1 = 0, dot = 0;
            for (int64_t j = 0; j < k; ++j) {
                l1 += std::fabs(t.values[static_cast<size_t>(j)] - z[static_cast<size_t>(j)]);
                dot += t.values[static_cast<size_t>(j)] * z[static_cast<size_t>(j)];
            }
            double expect = l1 + std::max(0.0, margin - dot);
            require(std::fabs(loss_path(t, z, margin) - expect) < tol,
                    "loss_path oracle mismatch");
        }
        {  // attention variance
            const int64_t s = 1 + trial % 3, h = 2 + trial % 3, w = 2 + trial % 4;
            AttentionMap maps;
            maps.values = Tensor({s, h, w});
            for (auto& v : maps.values.vec()) v = rng.uniform(0.0, 2.0);
            double expect = 0.0;
            for (int64_t si = 0; si < s; ++si) {
                double mu = 0.0;
                for (int64_t c = 0; c < h * w; ++c) mu += maps.values[si * h * w + c];
                mu /= static_cast<double>(h * w);
                for (int64_t c = 0; c < h * w; ++c) {
                    double dev = maps.values[si * h * w + c] - mu;
                    expect += dev * dev;
                }
            }
            expect /= static_cast<double>(s * h * w);
            require(std::fabs(loss_attention(maps) - expect) < tol,
                    "loss_attention oracle mismatch");
        }
        {  // reconstruction: anchored MSE + forward differences, boundary dropped
            const int64_t c = 1 + trial % 3, h = 2 + trial % 4, w = 2 + trial % 4;
            Tensor z0({c, h, w}), zt({c, h, w});
            for (auto& v : z0.vec()) v = rng.normal();
            for (auto& v : zt.vec()) v = rng.normal();
            double expect = 0.0;
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j) {
                        double cur = zt.at3(ci, i, j);
                        double d0 = z0.at3(ci, i, j) - cur;
                        expect += d0 * d0;
                        if (i + 1 < h) {
                            double dv = zt.at3(ci, i + 1, j) - cur;
                            expect += dv * dv;
                        }
                        if (j + 1 < w) {
                            double dv = zt.at3(ci, i, j + 1) - cur;
                            expect += dv * dv;
                        }
                    }
            expect /= static_cast<double>(c * h * w);
            require(std::fabs(loss_recon(z0, zt) - expect) < tol, "loss_recon oracle mismatch");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite.

double central_diff(const std::function<double(const std::vector<double>&)>& f,
                    std::vector<double> x, size_t i, double h = 1e-4) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

void criterion_gradients() {
    Rng rng(2002);
    const double tol = 1e-4;

    {  // attack guide losses w.r.t. the code vector
        const int64_t k = 12;
        TextGuideVector t(std::vector<double>(static_cast<size_t>(k)));
        std::vector<double> z(static_cast<size_t>(k));
        for (auto& v : t.values) v = rng.uniform(-0.9, 0.9);
        for (auto& v : z) v = rng.uniform(-0.7, 0.7);
        std::vector<double> g_dist(z.size(), 0.0), g_path(z.size(), 0.0);
        loss_distance_grad(t, z, g_dist, 1.0);
        loss_path_grad(t, z, 100.0, g_path, 1.0);  // hinge strictly active
        auto f_dist = [&](const std::vector<double>& v) { return loss_distance(t, v); };
        auto f_path = [&](const std::vector<double>& v) { return loss_path(t, v, 100.0); };
        for (size_t i = 0; i < z.size(); ++i) {
            require(rel_err(g_dist[i], central_diff(f_dist, z, i)) < tol,
                    "loss_distance gradient mismatch");
            require(rel_err(g_path[i], central_diff(f_path, z, i)) < tol,
                    "loss_path gradient mismatch");
        }
    }
    {  // attention + recon losses w.r.t. their tensors
        AttentionMap maps;
        maps.values = Tensor({2, 3, 4});
        for (auto& v : maps.values.vec()) v = rng.uniform(0.1, 1.9);
        Tensor g(maps.values.shape());
        loss_attention_grad(maps, g, 1.0);
        auto f_attn = [&](const std::vector<double>& v) {
            AttentionMap m;
            m.values = Tensor(maps.values.shape(), v);
            return loss_attention(m);
        };
        for (int64_t i = 0; i < maps.values.numel(); ++i)
            require(rel_err(g[i], central_diff(f_attn, maps.values.vec(),
                                               static_cast<size_t>(i))) < tol,
                    "loss_attention gradient mismatch");

        Tensor z0({2, 4, 4}), zt({2, 4, 4});
        for (auto& v : z0.vec()) v = rng.normal();
        for (auto& v : zt.vec()) v = rng.normal();
        Tensor gr(zt.shape());
        loss_recon_grad(z0, zt, gr, 1.0);
        auto f_rec = [&](const std::vector<double>& v) {
            return loss_recon(z0, Tensor(zt.shape(), v));
        };
        for (int64_t i = 0; i < zt.numel(); ++i)
            require(rel_err(gr[i], central_diff(f_rec, zt.vec(), static_cast<size_t>(i))) < tol,
                    "loss_recon gradient mismatch");
    }
    {  // alignment total loss w.r.t. HAN parameters (Eq. 7 path)
        HANParams han = HANParams::init(4, 77, 20, 12, 8);
        const int64_t n = 4;
        Tensor x({n, 20}), if_feat({n, 8}), b_img({n, 4});
        for (auto& v : x.vec()) v = rng.normal();
        for (auto& v : if_feat.vec()) v = rng.normal() + 0.2;
        for (auto& v : b_img.vec()) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
        AlignConfig acfg;
        acfg.alpha = 1.0;
        acfg.beta = 0.5;
        acfg.gamma = 1.0;
        std::vector<double> grad(static_cast<size_t>(han.total_len()), 0.0);
        align_loss_and_grad(han, x, if_feat, b_img, acfg, &grad);
        auto f = [&](const std::vector<double>& flat) {
            HANParams p = han;
            p.flat = flat;
            return align_loss_and_grad(p, x, if_feat, b_img, acfg, nullptr).total;
        };
        Rng pick(7);
        for (int trial = 0; trial < 20; ++trial) {
            size_t i = static_cast<size_t>(pick.uniform_int(0, han.total_len() - 1));
            require(rel_err(grad[i], central_diff(f, han.flat, i)) < tol,
                    "alignment gradient mismatch vs finite differences");
        }
    }
    {  // total objective w.r.t. the latent through pooler+HAN+attention+recon
        BackendConfig bcfg;
        bcfg.total_timesteps = 10;
        bcfg.seed = 99;
        ToyDiffusionBackend backend(bcfg);
        std::vector<ImageSample> imgs;
        Rng irng(31);
        for (int i = 0; i < 20; ++i) {
            Tensor px({3, 32, 32});
            for (auto& v : px.vec())
                v = 0.5 + 0.2 * std::sin(0.3 * static_cast<double>(i) + 0.05 * irng.normal());
            imgs.push_back({std::move(px), MultiLabelVector({1}), i});
        }
        backend.fit_autoencoder(imgs);
        HANParams han = HANParams::init(8, 5);
        HanGuideMapper mapper(han);
        Tensor latents({20, bcfg.latent_dim()}), texts({20, 1024});
        for (int i = 0; i < 20; ++i) {
            LatentState z = backend.encode(imgs[static_cast<size_t>(i)].pixels);
            std::copy(z.z.vec().begin(), z.z.vec().end(),
                      latents.data() + i * bcfg.latent_dim());
            for (int64_t j = 0; j < 1024; ++j) texts[i * 1024 + j] = irng.normal(0.0, 0.1);
        }
        LatentPooler pooler = LatentPooler::fit(latents, texts, 1e-3);

        TextLatent text(std::vector<double>(1024));
        for (auto& v : text.values) v = irng.normal(0.0, 0.2);
        TextGuideVector b_t(mapper.forward(text.values));
        LatentState z0 = backend.encode(imgs[0].pixels);
        LatentState z = backend.ddim_invert(z0, text, 4);
        AttackConfig acfg;
        const double margin = acfg.resolved_margin(8);

        auto objective = [&](const std::vector<double>& flat) {
            Tensor zt(z.z.shape(), flat);
            std::vector<double> b_z = mapper.forward(pooler.apply(zt));
            double att = loss_attack(loss_distance(b_t, b_z), loss_path(b_t, b_z, margin));
            double rec = loss_recon(z0.z, zt);
            LatentState state{zt, z.timestep};
            double atn = loss_attention(backend.attention(state, text));
            return total_objective(acfg, att, rec, atn);
        };

        std::vector<double> u = pooler.apply(z.z);
        std::vector<double> b_z = mapper.forward(u);
        std::vector<double> d_bz(b_z.size(), 0.0);
        loss_distance_grad(b_t, b_z, d_bz, acfg.kappa1);
        loss_path_grad(b_t, b_z, margin, d_bz, acfg.kappa1);
        Tensor d_lat(z.z.shape());
        loss_recon_grad(z0.z, z.z, d_lat, acfg.kappa2);
        AttentionMap maps = backend.attention(z, text);
        Tensor d_maps(maps.values.shape());
        loss_attention_grad(maps, d_maps, acfg.kappa3);
        std::vector<double> du = mapper.backward(u, d_bz);
        Tensor dz_pool = pooler.vjp(du, z.z.shape());
        Tensor dz_attn = backend.attention_vjp(z, text, d_maps);

        Rng pick(11);
        for (int trial = 0; trial < 10; ++trial) {
            int64_t i = pick.uniform_int(0, z.z.numel() - 1);
            double analytic = dz_pool[i] + d_lat[i] + dz_attn[i];
            double fd = central_diff(objective, z.z.vec(), static_cast<size_t>(i));
            require(rel_err(analytic, fd) < tol,
                    "total objective gradient mismatch vs finite differences");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: Hamming identities and retrieval oracles.

void criterion_hamming() {
    Rng rng(3003);
    for (int64_t k : {16, 32, 64}) {
        for (int trial = 0; trial < 10000; ++trial) {
            std::vector<int8_t> a(static_cast<size_t>(k)), b(static_cast<size_t>(k));
            for (auto& v : a) v = rng.uniform() < 0.5 ? -1 : 1;
            for (auto& v : b) v = rng.uniform() < 0.5 ? -1 : 1;
            HashCode ca(a), cb(b);
            double dot = 0;
            for (int64_t i = 0; i < k; ++i) dot += static_cast<double>(a[static_cast<size_t>(i)]) * b[static_cast<size_t>(i)];
            require(hamming_distance(ca, cb) == (static_cast<double>(k) - dot) / 2.0,
                    "hamming identity violated");
        }
    }

    // retrieval + t-MAP against exhaustive recomputation
    for (int round = 0; round < 3; ++round) {
        const int64_t n = 40 + round * 30, k = 16, classes = 5;
        RetrievalIndex index(k, classes);
        std::vector<HashCode> codes;
        std::vector<MultiLabelVector> labels;
        for (int64_t i = 0; i < n; ++i) {
            std::vector<int8_t> bits(static_cast<size_t>(k));
            for (auto& v : bits) v = rng.uniform() < 0.5 ? -1 : 1;
            MultiLabelVector lab(std::vector<uint8_t>(static_cast<size_t>(classes), 0));
            lab.bits[static_cast<size_t>(rng.uniform_int(0, classes - 1))] = 1;
            if (rng.uniform() < 0.3) lab.bits[static_cast<size_t>(rng.uniform_int(0, classes - 1))] = 1;
            HashCode code(bits);
            index.add(i, code, lab);
            codes.push_back(code);
            labels.push_back(lab);
        }
        std::vector<std::pair<HashCode, MultiLabelVector>> queries;
        for (int q = 0; q < 10; ++q) {
            std::vector<int8_t> bits(static_cast<size_t>(k));
            for (auto& v : bits) v = rng.uniform() < 0.5 ? -1 : 1;
            MultiLabelVector target(std::vector<uint8_t>(static_cast<size_t>(classes), 0));
            target.bits[static_cast<size_t>(rng.uniform_int(0, classes - 1))] = 1;
            queries.emplace_back(HashCode(bits), target);
        }
        const int64_t K = 15;

        // exhaustive oracle
        auto ap_oracle = [&](const HashCode& q, const MultiLabelVector& target) {
            std::vector<std::pair<double, int64_t>> ranked;
            for (int64_t i = 0; i < n; ++i) {
                double d = 0;
                for (int64_t j = 0; j < k; ++j)
                    d += std::fabs(static_cast<double>(codes[static_cast<size_t>(i)].bits[j]) -
                                   q.bits[j]) /
                         2.0;
                ranked.emplace_back(d, i);
            }
            std::stable_sort(ranked.begin(), ranked.end());
            double ap = 0.0;
            int64_t rel = 0;
            for (int64_t r = 0; r < K; ++r) {
                int64_t idx = ranked[static_cast<size_t>(r)].second;
                bool relevant = false;
                for (int64_t c = 0; c < classes; ++c)
                    if (target.bits[static_cast<size_t>(c)] &&
                        labels[static_cast<size_t>(idx)].bits[static_cast<size_t>(c)])
                        relevant = true;
                if (relevant) {
                    ++rel;
                    ap += static_cast<double>(rel) / static_cast<double>(r + 1);
                }
            }
            return rel == 0 ? 0.0 : ap / static_cast<double>(rel);
        };
        double tmap_expect = 0.0;
        for (const auto& [q, target] : queries) tmap_expect += ap_oracle(q, target);
        tmap_expect /= static_cast<double>(queries.size());
        TmapResult got = t_map_at_k(index, queries, K);
        require(std::fabs(got.t_map - tmap_expect) < 1e-12, "t-MAP differs from oracle");

        // top-K prefix equivalence (ids ascend within equal distance by construction of add order)
        for (const auto& [q, target] : queries) {
            auto ids = retrieve_topk(index, q, K);
            std::vector<std::pair<double, int64_t>> ranked;
            for (int64_t i = 0; i < n; ++i) {
                double d = 0;
                for (int64_t j = 0; j < k; ++j)
                    d += std::fabs(static_cast<double>(codes[static_cast<size_t>(i)].bits[j]) -
                                   q.bits[j]) /
                         2.0;
                ranked.emplace_back(d, i);
            }
            std::stable_sort(ranked.begin(), ranked.end());
            for (int64_t r = 0; r < K; ++r)
                require(ids[static_cast<size_t>(r)] == ranked[static_cast<size_t>(r)].second,
                        "top-K differs from exhaustive sort");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: inversion and autoencoder round trips on the toy backend.

void criterion_inversion() {
    g_ctx.build();
    const auto& backend = g_ctx.backend;

    double worst_pix = 0.0;
    for (const auto& img : g_ctx.bundle.database) {
        LatentState z = backend.encode(img.pixels);
        Tensor rec = backend.decode(z);
        double mse = 0.0;
        for (int64_t i = 0; i < rec.numel(); ++i) {
            double dv = rec[i] - img.pixels[i];
            mse += dv * dv;
        }
        worst_pix = std::max(worst_pix, mse / static_cast<double>(rec.numel()));
    }
    note("worst encode/decode pixel MSE = " + std::to_string(worst_pix));
    require(worst_pix < 1e-3, "encode/decode round-trip MSE >= 1e-3");

    TextLatent text = g_ctx.captions.queries.front();
    for (int n : {1, 5, 10}) {
        double worst = 0.0;
        for (int qi = 0; qi < 5; ++qi) {
            LatentState z0 = backend.encode(g_ctx.bundle.queries[static_cast<size_t>(qi)].pixels);
            LatentState inv = backend.ddim_invert(z0, text, n);
            LatentState cur = inv;
            for (int t = n; t >= 1; --t) cur = backend.step(cur, text, t).first;
            double mse = 0.0;
            for (int64_t i = 0; i < cur.z.numel(); ++i) {
                double dv = cur.z[i] - z0.z[i];
                mse += dv * dv;
            }
            worst = std::max(worst, mse / static_cast<double>(cur.z.numel()));
        }
        note("inversion round-trip MSE (n=" + std::to_string(n) + ") = " + std::to_string(worst));
        require(worst < 1e-3, "inversion round trip MSE >= 1e-3 at n=" + std::to_string(n));
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: alignment efficacy on held-out pairs.

double mean_guide_distance(const HANParams& han, const std::vector<TextLatent>& texts,
                           const std::vector<ImageSample>& images,
                           const HashModelParams& model) {
    double total = 0.0;
    for (size_t i = 0; i < images.size(); ++i) {
        HanForward out = han_forward(han, texts[i]);
        HashCode guide = sign_binarize(ContinuousCode(out.guide.values));
        HashCode code = sign_binarize(hash_forward(model, images[i]));
        total += hamming_distance(guide, code);
    }
    return total / static_cast<double>(images.size());
}

void criterion_alignment() {
    g_ctx.build();
    HANParams untrained = HANParams::init(g_ctx.cfg.hash_model.k, g_ctx.cfg.alignment.seed);
    double before = mean_guide_distance(untrained, g_ctx.captions.queries, g_ctx.bundle.queries,
                                        g_ctx.model);
    double after = mean_guide_distance(g_ctx.han, g_ctx.captions.queries, g_ctx.bundle.queries,
                                       g_ctx.model);
    note("held-out guide distance untrained = " + std::to_string(before) +
         ", trained = " + std::to_string(after));
    require(after <= 0.5 * before, "alignment failed to halve the held-out guide distance");
}

// ---------------------------------------------------------------------------
// Criterion 6: end-to-end attack efficacy on the default toy config.

void criterion_attack_efficacy() {
    g_ctx.build();
    const ExperimentConfig& cfg = g_ctx.cfg;

    // Precondition: the trained hash model must retrieve its own classes well.
    RetrievalIndex index = build_index(cfg, g_ctx.bundle, g_ctx.model);
    {
        std::vector<std::pair<HashCode, MultiLabelVector>> self_queries;
        for (const auto& q : g_ctx.bundle.queries)
            self_queries.emplace_back(sign_binarize(hash_forward(g_ctx.model, q)), q.labels);
        double self_tmap = t_map_at_k(index, self_queries, cfg.evaluation.top_k).t_map;
        note("benign self-label t-MAP = " + std::to_string(self_tmap));
        require(self_tmap >= 0.7, "hash model below the 0.7 self-retrieval precondition");
    }

    HanGuideMapper mapper(g_ctx.han);
    std::vector<AttackResult> attacks = stage_attack(cfg, g_ctx.bundle, g_ctx.captions, mapper,
                                                     g_ctx.model, g_ctx.backend, g_ctx.pooler, "");
    EvalOutcome outcome = stage_eval(cfg, g_ctx.bundle, g_ctx.model, index, attacks, "");
    note("t-MAP benign = " + std::to_string(outcome.benign.t_map) +
         ", adversarial = " + std::to_string(outcome.adversarial.t_map) +
         ", chance = " + std::to_string(outcome.chance_tmap));
    require(outcome.adversarial.t_map >= 3.0 * outcome.benign.t_map,
            "adversarial t-MAP below 3x benign");
    require(outcome.benign.t_map <= 2.0 * outcome.chance_tmap,
            "benign t-MAP above twice the empirical chance level");
}

// ---------------------------------------------------------------------------
// Criterion 7: ablation ordering over 3 seeds.

void criterion_ablation() {
    const std::vector<std::array<double, 3>> combos = {
        {15, 0, 0}, {0, 1, 0}, {0, 0, 8}, {15, 1, 0}, {0, 1, 8}, {15, 0, 8}, {15, 1, 8},
    };
    const double band = 0.02;  // 2 t-MAP points on [0,1]

    std::vector<AblationTable> tables;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        ExperimentConfig cfg = ExperimentConfig::defaults();
        cfg.dataset.seed = seed;
        cfg.dataset.num_queries = 32;
        cfg.hash_model.seed = seed + 100;
        cfg.alignment.seed = seed + 200;
        cfg.backend.seed = seed + 300;
        cfg.evaluation.pairing_seed = seed + 400;
        tables.push_back(ablation_sweep(cfg, combos, ""));
    }

    auto mean_with = [&](size_t row) {
        double s = 0;
        for (const auto& t : tables) s += t.rows[row].tmap_with_han;
        return s / static_cast<double>(tables.size());
    };
    auto mean_without = [&](size_t row) {
        double s = 0;
        for (const auto& t : tables) s += t.rows[row].tmap_without_han;
        return s / static_cast<double>(tables.size());
    };
    double mean_benign = 0;
    for (const auto& t : tables) mean_benign += t.benign_tmap;
    mean_benign /= static_cast<double>(tables.size());

    const size_t k1_only = 0, k2_only = 1, k3_only = 2, k1k2 = 3, k2k3 = 4, k1k3 = 5, full = 6;
    note("mean t-MAP: full=" + std::to_string(mean_with(full)) +
         " k1k3=" + std::to_string(mean_with(k1k3)) + " k1k2=" + std::to_string(mean_with(k1k2)) +
         " k1=" + std::to_string(mean_with(k1_only)) + " benign=" + std::to_string(mean_benign) +
         " full-woHAN=" + std::to_string(mean_without(full)));

    require(mean_with(full) >= mean_with(k1k3) - band, "ordering: full < (k1,k3) beyond band");
    require(mean_with(k1k3) >= mean_with(k1k2) - band, "ordering: (k1,k3) < (k1,k2) beyond band");
    require(mean_with(k1k2) >= mean_with(k1_only) - band,
            "ordering: (k1,k2) < k1-only beyond band");
    require(mean_with(k2_only) <= mean_benign + band, "kappa1=0 combo (k2) beats benign + band");
    require(mean_with(k3_only) <= mean_benign + band, "kappa1=0 combo (k3) beats benign + band");
    require(mean_with(k2k3) <= mean_benign + band, "kappa1=0 combo (k2,k3) beats benign + band");
    require(mean_without(full) < mean_with(full), "full combo without HAN not strictly below");
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism and frozen-model contracts.

void criterion_determinism() {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.dataset.num_classes = 4;
    cfg.dataset.images_per_class = 12;
    cfg.dataset.image_size = 16;
    cfg.dataset.num_queries = 6;
    cfg.hash_model.k = 8;
    cfg.hash_model.epochs = 5;
    cfg.alignment.epochs = 25;
    cfg.backend.total_timesteps = 12;
    cfg.attack.steps = 10;
    cfg.evaluation.top_k = 10;
    cfg.validate();

    RunReport a = run_pipeline(cfg, "");
    RunReport b = run_pipeline(cfg, "");
    // Bitwise comparison of everything except wall-clock timings.
    require(run_report_json(a, false) == run_report_json(b, false),
            "seeded pipeline reports differ bitwise");

    g_ctx.build();
    uint64_t han_sum = checksum(g_ctx.han.flat);
    uint64_t model_sum = checksum(g_ctx.model.flat);
    uint64_t pooler_sum = g_ctx.pooler.weight_checksum();
    HanGuideMapper mapper(g_ctx.han);
    run_attack(g_ctx.bundle.queries[0], g_ctx.captions.queries[0], g_ctx.captions.targets[0],
               mapper, g_ctx.model, g_ctx.backend, g_ctx.pooler, g_ctx.cfg.attack);
    require(checksum(g_ctx.han.flat) == han_sum, "HAN parameters changed by run_attack");
    require(checksum(g_ctx.model.flat) == model_sum, "hash model changed by run_attack");
    require(g_ctx.pooler.weight_checksum() == pooler_sum, "pooler changed by run_attack");
}

// ---------------------------------------------------------------------------
// Criterion 9: serialization round trips.

void criterion_serialization() {
    namespace fs = std::filesystem;
    fs::path tmp = fs::temp_directory_path() / "hashlat_acceptance_io";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    Rng rng(9009);

    {  // retrieval index text format
        RetrievalIndex index(16, 4);
        for (int64_t i = 0; i < 25; ++i) {
            std::vector<int8_t> bits(16);
            for (auto& v : bits) v = rng.uniform() < 0.5 ? -1 : 1;
            MultiLabelVector lab(std::vector<uint8_t>(4, 0));
            lab.bits[static_cast<size_t>(rng.uniform_int(0, 3))] = 1;
            index.add(i * 11, HashCode(bits), lab);
        }
        std::string p = (tmp / "index.tsv").string();
        index.save(p);
        RetrievalIndex loaded = RetrievalIndex::load(p);
        require(loaded.size() == index.size(), "index size changed in round trip");
        for (int64_t i = 0; i < index.size(); ++i) {
            require(loaded.id_at(i) == index.id_at(i), "index id changed");
            require(loaded.code_at(i) == index.code_at(i), "index code changed");
            require(loaded.labels_at(i) == index.labels_at(i), "index labels changed");
        }
    }
    {  // model checkpoints
        HashModelParams model = HashModelParams::init(16, 32, 5);
        for (auto& v : model.flat) v = rng.normal();
        std::string p = (tmp / "hash.ckpt").string();
        model.save(p);
        require(HashModelParams::load(p).flat == model.flat, "hash checkpoint not exact");

        HANParams han = HANParams::init(16, 7);
        for (auto& v : han.flat) v = rng.normal();
        std::string hp = (tmp / "han.ckpt").string();
        han.save(hp);
        require(HANParams::load(hp).flat == han.flat, "HAN checkpoint not exact");
    }
    {  // caption cache
        std::vector<CaptionCacheEntry> entries;
        CaptionCacheEntry e;
        e.image_id = 4;
        e.captions = {{"a red circle on a plain background", 4, 0.75},
                      {"unicode \"quotes\" and tabs\t", 4, std::nullopt}};
        entries.push_back(e);
        std::string p = (tmp / "captions.jsonl").string();
        save_caption_cache(p, entries);
        auto loaded = load_caption_cache(p);
        require(loaded.size() == 1 && loaded[0].captions.size() == 2, "cache shape changed");
        require(loaded[0].captions[0].text == e.captions[0].text, "cache text changed");
        require(*loaded[0].captions[0].similarity_score == 0.75, "cache score changed");
        require(!loaded[0].captions[1].similarity_score.has_value(), "cache null score changed");
    }
    {  // config echo
        std::string text = ExperimentConfig::default_config_text();
        ExperimentConfig cfg = ExperimentConfig::from_text(text);
        require(cfg.echo == text, "config echo not byte-identical");
        EvalOutcome fake;
        fake.benign.per_query_ap = {0.0};
        fake.adversarial.per_query_ap = {0.0};
        DatasetBundle empty_bundle;
        RunReport report = assemble_report(cfg, empty_bundle, {}, fake);
        require(report.config_echo == text, "report echo not byte-identical");
    }
    fs::remove_all(tmp);
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<void()> fn;
    };
    std::vector<Criterion> criteria = {
        {"1 loss-oracle equivalence", criterion_loss_oracles},
        {"2 gradient suite", criterion_gradients},
        {"3 hamming identities and retrieval oracles", criterion_hamming},
        {"4 inversion and autoencoder round trips", criterion_inversion},
        {"5 alignment efficacy", criterion_alignment},
        {"6 end-to-end attack efficacy", criterion_attack_efficacy},
        {"7 ablation ordering", criterion_ablation},
        {"8 determinism and frozen contracts", criterion_determinism},
        {"9 serialization round trips", criterion_serialization},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        g_notes.clear();
        auto start = std::chrono::steady_clock::now();
        std::string failure;
        try {
            c.fn();
        } catch (const Failure& f) {
            failure = f.what;
        } catch (const std::exception& e) {
            failure = std::string("exception: ") + e.what();
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (failure.empty()) {
            std::printf("[PASS] criterion %s (%.1fs)\n", c.name, secs);
        } else {
            std::printf("[FAIL] criterion %s (%.1fs): %s\n", c.name, secs, failure.c_str());
            ++failures;
        }
        for (const auto& n : g_notes) std::printf("       %s\n", n.c_str());
        std::fflush(stdout);
    }
    if (failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", failures);
    return 1;
}
