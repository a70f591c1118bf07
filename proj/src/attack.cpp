#include "hashlat/attack.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hashlat/core/adamw.hpp"
#include "hashlat/core/errors.hpp"
#include "hashlat/core/image_io.hpp"
#include "hashlat/core/kernels.hpp"
#include "hashlat/core/rng.hpp"

namespace hashlat {

void AttackConfig::validate() const {
    if (kappa1 < 0.0 || kappa2 < 0.0 || kappa3 < 0.0)
        throw ConfigError("attack: kappa weights must be >= 0");
    if (kappa1 == 0.0 && kappa2 == 0.0 && kappa3 == 0.0)
        throw ConfigError("attack: at least one kappa must be > 0");
    if (steps < 0) throw ConfigError("attack: steps must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("attack: learning rate must be > 0");
    if (margin == 0.0) throw ConfigError("attack: margin must be > 0 (or < 0 for the default)");
}

namespace {

constexpr double kClamp = 1e-6;

void check_guide_pair(const TextGuideVector& b_t, const std::vector<double>& b_z) {
    if (b_t.k() != static_cast<int64_t>(b_z.size()))
        throw DimensionError("attack loss: guide/code length mismatch");
    for (double v : b_t.values)
        if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9)
            throw InvalidValueError("attack loss: guide value outside [-1,1]");
    for (double v : b_z)
        if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9)
            throw InvalidValueError("attack loss: code value outside [-1,1]");
}

}  // namespace

double loss_distance(const TextGuideVector& b_t, const std::vector<double>& b_z) {
    std::vector<double> dummy(b_z.size());
    return loss_distance_grad(b_t, b_z, dummy, 0.0);
}

double loss_distance_grad(const TextGuideVector& b_t, const std::vector<double>& b_z,
                          std::vector<double>& d_bz, double scale) {
    check_guide_pair(b_t, b_z);
    const int64_t k = b_t.k();
    double total = 0.0;
    for (int64_t j = 0; j < k; ++j) {
        double q = 0.5 * (1.0 + b_t.values[static_cast<size_t>(j)]);
        double p_raw = 0.5 * (1.0 + b_z[static_cast<size_t>(j)]);
        double p = std::min(1.0 - kClamp, std::max(kClamp, p_raw));
        total += -(q * std::log(p) + (1.0 - q) * std::log(1.0 - p));
        if (scale != 0.0 && p_raw > kClamp && p_raw < 1.0 - kClamp) {
            double dldp = -q / p + (1.0 - q) / (1.0 - p);
            d_bz[static_cast<size_t>(j)] += scale * dldp * 0.5 / static_cast<double>(k);
        }
    }
    return total / static_cast<double>(k);
}

double loss_path(const TextGuideVector& b_t, const std::vector<double>& b_z, double margin) {
    std::vector<double> dummy(b_z.size());
    return loss_path_grad(b_t, b_z, margin, dummy, 0.0);
}

double loss_path_grad(const TextGuideVector& b_t, const std::vector<double>& b_z, double margin,
                      std::vector<double>& d_bz, double scale) {
    check_guide_pair(b_t, b_z);
    const int64_t k = b_t.k();
    double l1 = 0.0, dot = 0.0;
    for (int64_t j = 0; j < k; ++j) {
        double t = b_t.values[static_cast<size_t>(j)];
        double z = b_z[static_cast<size_t>(j)];
        l1 += std::abs(t - z);
        dot += t * z;
    }
    const bool hinge_active = dot < margin;
    if (scale != 0.0) {
        for (int64_t j = 0; j < k; ++j) {
            double t = b_t.values[static_cast<size_t>(j)];
            double z = b_z[static_cast<size_t>(j)];
            double g = 0.0;
            if (z != t) g += (z > t ? 1.0 : -1.0);
            if (hinge_active) g -= t;
            d_bz[static_cast<size_t>(j)] += scale * g;
        }
    }
    return l1 + (hinge_active ? margin - dot : 0.0);
}

double loss_attack(double distance, double path) { return distance + path; }

double loss_attention(const AttentionMap& maps) {
    Tensor dummy(maps.values.shape());
    return loss_attention_grad(maps, dummy, 0.0);
}

double loss_attention_grad(const AttentionMap& maps, Tensor& d_maps, double scale) {
    if (maps.values.shape().size() != 3)
        throw DimensionError("loss_attention: expected heads x H x W");
    const int64_t s_dim = maps.heads(), cells = maps.height() * maps.width();
    if (s_dim < 1 || cells < 1) throw DimensionError("loss_attention: empty map");
    const double denom = static_cast<double>(s_dim * cells);
    double total = 0.0;
    for (int64_t s = 0; s < s_dim; ++s) {
        const double* head = maps.values.data() + s * cells;
        // Mean via deviations from the first entry: exact zero deviations for
        // constant maps, so the analytic zero case is exactly zero.
        double shift = 0.0;
        for (int64_t c = 0; c < cells; ++c) shift += head[c] - head[0];
        double mu = head[0] + shift / static_cast<double>(cells);
        for (int64_t c = 0; c < cells; ++c) {
            double dev = head[c] - mu;
            total += dev * dev;
            // sum of deviations is zero, so d mu / d A drops out
            if (scale != 0.0) d_maps[s * cells + c] += scale * 2.0 * dev / denom;
        }
    }
    return total / denom;
}

double loss_recon(const Tensor& z0, const Tensor& zt) {
    Tensor dummy(zt.shape());
    return loss_recon_grad(z0, zt, dummy, 0.0);
}

double loss_recon_grad(const Tensor& z0, const Tensor& zt, Tensor& d_zt, double scale) {
    if (!z0.same_shape(zt)) throw DimensionError("loss_recon: latent shape mismatch");
    if (z0.shape().size() != 3) throw DimensionError("loss_recon: expected C x H x W");
    const int64_t ch = zt.dim(0), h = zt.dim(1), w = zt.dim(2);
    const double denom = static_cast<double>(h * w) * static_cast<double>(ch);
    double total = 0.0;
    for (int64_t c = 0; c < ch; ++c) {
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                double cur = zt.at3(c, i, j);
                double diff = z0.at3(c, i, j) - cur;
                total += diff * diff;
                if (scale != 0.0) d_zt.at3(c, i, j) += scale * (-2.0 * diff) / denom;
                if (i + 1 < h) {
                    double dv = zt.at3(c, i + 1, j) - cur;
                    total += dv * dv;
                    if (scale != 0.0) {
                        d_zt.at3(c, i + 1, j) += scale * 2.0 * dv / denom;
                        d_zt.at3(c, i, j) -= scale * 2.0 * dv / denom;
                    }
                }
                if (j + 1 < w) {
                    double dv = zt.at3(c, i, j + 1) - cur;
                    total += dv * dv;
                    if (scale != 0.0) {
                        d_zt.at3(c, i, j + 1) += scale * 2.0 * dv / denom;
                        d_zt.at3(c, i, j) -= scale * 2.0 * dv / denom;
                    }
                }
            }
        }
    }
    return total / denom;
}

double total_objective(const AttackConfig& cfg, double attack, double recon, double attention) {
    return cfg.kappa1 * attack + cfg.kappa2 * recon + cfg.kappa3 * attention;
}

// ---------------------------------------------------------------------------
// Guide mappers

std::vector<double> HanGuideMapper::forward(const std::vector<double>& u) const {
    HanBatchCache cache;
    han_batch_forward(params_, Tensor({1, params_.in_dim}, u), cache);
    return cache.bt.vec();
}

std::vector<double> HanGuideMapper::backward(const std::vector<double>& u,
                                             const std::vector<double>& d_b) const {
    HanBatchCache cache;
    han_batch_forward(params_, Tensor({1, params_.in_dim}, u), cache);
    std::vector<double> param_grad(static_cast<size_t>(params_.total_len()), 0.0);
    Tensor d_input;
    han_batch_backward(params_, cache, Tensor({1, params_.h2}),
                       Tensor({1, params_.k}, d_b), param_grad, &d_input);
    return d_input.vec();
}

RandomHeadGuideMapper::RandomHeadGuideMapper(int64_t k, int64_t in_dim, uint64_t seed)
    : k_(k), in_dim_(in_dim) {
    Rng rng(seed ^ 0x7a3b9c5de1f08642ull);
    w_.resize(static_cast<size_t>(k * in_dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : w_) v = rng.normal(0.0, scale);
}

std::vector<double> RandomHeadGuideMapper::forward(const std::vector<double>& u) const {
    if (static_cast<int64_t>(u.size()) != in_dim_)
        throw DimensionError("guide mapper: input dim mismatch");
    std::vector<double> b(static_cast<size_t>(k_));
    for (int64_t j = 0; j < k_; ++j) {
        double acc = 0.0;
        const double* row = w_.data() + j * in_dim_;
        for (int64_t i = 0; i < in_dim_; ++i) acc += row[i] * u[static_cast<size_t>(i)];
        b[static_cast<size_t>(j)] = std::tanh(acc);
    }
    return b;
}

std::vector<double> RandomHeadGuideMapper::backward(const std::vector<double>& u,
                                                    const std::vector<double>& d_b) const {
    std::vector<double> b = forward(u);
    std::vector<double> du(static_cast<size_t>(in_dim_), 0.0);
    for (int64_t j = 0; j < k_; ++j) {
        double da = d_b[static_cast<size_t>(j)] * (1.0 - b[static_cast<size_t>(j)] * b[static_cast<size_t>(j)]);
        const double* row = w_.data() + j * in_dim_;
        for (int64_t i = 0; i < in_dim_; ++i) du[static_cast<size_t>(i)] += da * row[i];
    }
    return du;
}

// ---------------------------------------------------------------------------
// Latent pooler

LatentPooler::LatentPooler(int64_t out_dim, int64_t in_dim)
    : out_dim_(out_dim), in_dim_(in_dim), w_(static_cast<size_t>(out_dim * in_dim), 0.0) {}

LatentPooler LatentPooler::fit(const Tensor& latents, const Tensor& texts, double ridge) {
    if (latents.shape().size() != 2 || texts.shape().size() != 2 ||
        latents.dim(0) != texts.dim(0))
        throw DimensionError("LatentPooler::fit: batch mismatch");
    const int64_t n = latents.dim(0), in = latents.dim(1), out = texts.dim(1);
    // Normal equations: (Z^T Z + ridge I) X = Z^T T, P = X^T.
    std::vector<double> ztz(static_cast<size_t>(in * in));
    kernels::matmul_tn(latents.data(), latents.data(), ztz.data(), in, n, in);
    std::vector<double> ztt(static_cast<size_t>(in * out));
    kernels::matmul_tn(latents.data(), texts.data(), ztt.data(), in, n, out);
    double trace = 0.0;
    for (int64_t i = 0; i < in; ++i) trace += ztz[static_cast<size_t>(i * in + i)];
    double lambda = ridge * std::max(trace / static_cast<double>(in), 1e-12);
    std::vector<double> x;
    kernels::solve_spd(std::move(ztz), in, ztt, out, x, lambda);
    LatentPooler pooler(out, in);
    for (int64_t o = 0; o < out; ++o)
        for (int64_t i = 0; i < in; ++i)
            pooler.w_[static_cast<size_t>(o * in + i)] = x[static_cast<size_t>(i * out + o)];
    return pooler;
}

std::vector<double> LatentPooler::apply(const Tensor& z) const {
    if (z.numel() != in_dim_) throw DimensionError("LatentPooler: latent size mismatch");
    std::vector<double> u(static_cast<size_t>(out_dim_), 0.0);
    for (int64_t o = 0; o < out_dim_; ++o) {
        const double* row = w_.data() + o * in_dim_;
        double acc = 0.0;
        for (int64_t i = 0; i < in_dim_; ++i) acc += row[i] * z[i];
        u[static_cast<size_t>(o)] = acc;
    }
    return u;
}

Tensor LatentPooler::vjp(const std::vector<double>& d_u, const std::vector<int64_t>& z_shape) const {
    if (static_cast<int64_t>(d_u.size()) != out_dim_)
        throw DimensionError("LatentPooler::vjp: gradient size mismatch");
    Tensor dz(z_shape);
    if (dz.numel() != in_dim_) throw DimensionError("LatentPooler::vjp: latent shape mismatch");
    for (int64_t o = 0; o < out_dim_; ++o) {
        double g = d_u[static_cast<size_t>(o)];
        if (g == 0.0) continue;
        const double* row = w_.data() + o * in_dim_;
        for (int64_t i = 0; i < in_dim_; ++i) dz[i] += g * row[i];
    }
    return dz;
}

uint64_t LatentPooler::weight_checksum() const { return checksum(w_); }

void LatentPooler::save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.put("w", {out_dim_, in_dim_}, w_);
    ckpt.save(path);
}

LatentPooler LatentPooler::load(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    const Tensor& w = ckpt.get("w");
    LatentPooler pooler(w.dim(0), w.dim(1));
    pooler.w_ = w.vec();
    return pooler;
}

// ---------------------------------------------------------------------------
// The optimization loop

namespace {

HashCode sign_of(const std::vector<double>& v) { return sign_binarize(ContinuousCode(v)); }

}  // namespace

AttackResult run_attack(const ImageSample& benign, const TextLatent& benign_text,
                        const TextLatent& target_text, const GuideMapper& mapper,
                        const HashModelParams& hash_model, const DiffusionBackend& backend,
                        const LatentPooler& pooler, const AttackConfig& cfg) {
    cfg.validate();
    const int64_t k = mapper.k();
    const double margin = cfg.resolved_margin(k);

    AttackResult result;
    result.target_guide = TextGuideVector(mapper.forward(target_text.values));
    result.benign_guide = TextGuideVector(mapper.forward(benign_text.values));
    const HashCode target_code = sign_of(result.target_guide.values);

    result.benign_code = sign_binarize(hash_forward(hash_model, benign));
    result.benign_hamming_to_target = hamming_distance(result.benign_code, target_code);

    LatentState z0 = backend.encode(benign.pixels);
    LatentState z = z0;
    if (cfg.steps > 0) z = backend.ddim_invert(z0, benign_text, static_cast<int>(cfg.steps));
    const Tensor z_ref = z.z;  // inverted latent anchors the recon term

    {
        std::vector<double> b_init = mapper.forward(pooler.apply(z.z));
        result.initial_t_distance = hamming_distance(sign_of(b_init), target_code);
    }

    AdamW opt(static_cast<size_t>(z.z.numel()), cfg.learning_rate, cfg.weight_decay);
    std::vector<double> dz(static_cast<size_t>(z.z.numel()));

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        auto [z_next, maps] = backend.step(z, benign_text, z.timestep);

        std::vector<double> u = pooler.apply(z_next.z);
        std::vector<double> b_z = mapper.forward(u);

        std::vector<double> d_bz(b_z.size(), 0.0);
        double l_dist = loss_distance_grad(result.target_guide, b_z, d_bz, cfg.kappa1);
        double l_path = loss_path_grad(result.target_guide, b_z, margin, d_bz, cfg.kappa1);
        double l_att = loss_attack(l_dist, l_path);

        Tensor d_lat(z_next.z.shape());
        d_lat.fill(0.0);
        double l_rec = loss_recon_grad(z_ref, z_next.z, d_lat, cfg.kappa2);

        Tensor d_maps(maps.values.shape());
        d_maps.fill(0.0);
        double l_atn = loss_attention_grad(maps, d_maps, cfg.kappa3);

        double total = total_objective(cfg, l_att, l_rec, l_atn);
        if (!std::isfinite(total))
            throw DivergenceError("run_attack: non-finite loss at step " + std::to_string(step),
                                  static_cast<int>(step));

        result.trace_distance.push_back(l_dist);
        result.trace_path.push_back(l_path);
        result.trace_attack.push_back(l_att);
        result.trace_recon.push_back(l_rec);
        result.trace_attention.push_back(l_atn);
        result.trace_total.push_back(total);
        result.trace_t_distance.push_back(hamming_distance(sign_of(b_z), target_code));

        // d_total/d_z_next: guide losses through mapper and pooler, recon
        // directly, attention through the map's dependence on the latent.
        std::vector<double> du = mapper.backward(u, d_bz);
        Tensor dz_pool = pooler.vjp(du, z_next.z.shape());
        Tensor dz_attn = backend.attention_vjp(z_next, benign_text, d_maps);
        for (int64_t i = 0; i < z_next.z.numel(); ++i)
            dz[static_cast<size_t>(i)] = dz_pool[i] + d_lat[i] + dz_attn[i];

        opt.step(z_next.z.vec(), dz);
        for (double v : z_next.z.vec())
            if (!std::isfinite(v))
                throw DivergenceError("run_attack: latent diverged at step " + std::to_string(step),
                                      static_cast<int>(step));
        z = std::move(z_next);
    }

    result.final_latent = z;
    result.adversarial_pixels = backend.decode(z);
    if (cfg.epsilon_linf > 0.0) {
        for (int64_t i = 0; i < result.adversarial_pixels.numel(); ++i) {
            double lo = benign.pixels[i] - cfg.epsilon_linf;
            double hi = benign.pixels[i] + cfg.epsilon_linf;
            double v = std::clamp(result.adversarial_pixels[i], lo, hi);
            result.adversarial_pixels[i] = std::clamp(v, 0.0, 1.0);
        }
    }

    ImageSample adv{result.adversarial_pixels, benign.labels, benign.id};
    result.achieved_code = sign_binarize(hash_forward(hash_model, adv));
    result.eval_hamming_to_target = hamming_distance(result.achieved_code, target_code);
    result.latent_path_hamming_to_target =
        result.trace_t_distance.empty() ? result.initial_t_distance
                                        : result.trace_t_distance.back();
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

void save_attack_result(const AttackResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["trace"] = {{"distance", result.trace_distance},   {"path", result.trace_path},
                  {"attack", result.trace_attack},       {"recon", result.trace_recon},
                  {"attention", result.trace_attention}, {"total", result.trace_total},
                  {"t_distance", result.trace_t_distance}};
    j["initial_t_distance"] = result.initial_t_distance;
    j["eval_hamming_to_target"] = result.eval_hamming_to_target;
    j["latent_path_hamming_to_target"] = result.latent_path_hamming_to_target;
    j["benign_hamming_to_target"] = result.benign_hamming_to_target;
    j["target_guide"] = result.target_guide.values;
    j["benign_guide"] = result.benign_guide.values;
    auto code_to_vec = [](const HashCode& code) {
        std::vector<int> v(code.bits.begin(), code.bits.end());
        return v;
    };
    j["achieved_code"] = code_to_vec(result.achieved_code);
    j["benign_code"] = code_to_vec(result.benign_code);
    std::ofstream os(dir + "/trace.json");
    if (!os) throw IoError("save_attack_result: cannot write trace");
    os << j.dump(2) << "\n";

    write_image_png(dir + "/adversarial.png", result.adversarial_pixels);

    Checkpoint ckpt;
    ckpt.put("final_latent", result.final_latent.z);
    ckpt.put_scalar("final_timestep", static_cast<double>(result.final_latent.timestep));
    ckpt.put("adversarial_pixels", result.adversarial_pixels);
    ckpt.save(dir + "/latent.ckpt");
}

AttackResult load_attack_result_arrays(const std::string& dir) {
    AttackResult result;
    Checkpoint ckpt = Checkpoint::load(dir + "/latent.ckpt");
    result.final_latent.z = ckpt.get("final_latent");
    result.final_latent.timestep = static_cast<int>(ckpt.get_scalar("final_timestep"));
    result.adversarial_pixels = ckpt.get("adversarial_pixels");

    std::ifstream is(dir + "/trace.json");
    if (!is) throw IoError("load_attack_result_arrays: missing trace");
    nlohmann::json j = nlohmann::json::parse(is);
    result.trace_distance = j["trace"]["distance"].get<std::vector<double>>();
    result.trace_path = j["trace"]["path"].get<std::vector<double>>();
    result.trace_attack = j["trace"]["attack"].get<std::vector<double>>();
    result.trace_recon = j["trace"]["recon"].get<std::vector<double>>();
    result.trace_attention = j["trace"]["attention"].get<std::vector<double>>();
    result.trace_total = j["trace"]["total"].get<std::vector<double>>();
    result.trace_t_distance = j["trace"]["t_distance"].get<std::vector<double>>();
    result.initial_t_distance = j["initial_t_distance"].get<double>();
    result.eval_hamming_to_target = j["eval_hamming_to_target"].get<double>();
    result.latent_path_hamming_to_target = j["latent_path_hamming_to_target"].get<double>();
    result.benign_hamming_to_target = j["benign_hamming_to_target"].get<double>();
    result.target_guide = TextGuideVector(j["target_guide"].get<std::vector<double>>());
    result.benign_guide = TextGuideVector(j["benign_guide"].get<std::vector<double>>());
    auto vec_to_code = [](const std::vector<int>& v) {
        std::vector<int8_t> bits(v.begin(), v.end());
        return HashCode(bits);
    };
    result.achieved_code = vec_to_code(j["achieved_code"].get<std::vector<int>>());
    result.benign_code = vec_to_code(j["benign_code"].get<std::vector<int>>());
    return result;
}

}  // namespace hashlat
