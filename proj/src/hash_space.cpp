#include "hashlat/hash_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hashlat/core/kernels.hpp"

namespace hashlat {

bool MultiLabelVector::any() const {
    for (uint8_t b : bits)
        if (b) return true;
    return false;
}

bool MultiLabelVector::intersects(const MultiLabelVector& other) const {
    size_t n = std::min(bits.size(), other.bits.size());
    for (size_t i = 0; i < n; ++i)
        if (bits[i] && other.bits[i]) return true;
    return false;
}

HashCode::HashCode(std::vector<int8_t> b) : bits(std::move(b)) {
    for (int8_t v : bits)
        if (v != 1 && v != -1)
            throw InvalidValueError("HashCode: entries must be -1 or +1");
}

int pairwise_similarity(const MultiLabelVector& a, const MultiLabelVector& b) {
    if (a.num_classes() != b.num_classes())
        throw DimensionError("pairwise_similarity: label length mismatch");
    return a.intersects(b) ? 1 : 0;
}

HashCode sign_binarize(const ContinuousCode& c) {
    std::vector<int8_t> bits(c.values.size());
    for (size_t i = 0; i < c.values.size(); ++i) {
        double v = c.values[i];
        if (std::isnan(v)) throw InvalidValueError("sign_binarize: NaN input");
        bits[i] = v < 0.0 ? int8_t{-1} : int8_t{1};
    }
    return HashCode(std::move(bits));
}

double hamming_distance(const HashCode& a, const HashCode& b) {
    if (a.k() != b.k()) throw DimensionError("hamming_distance: code length mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.k(); ++i)
        s += std::abs(static_cast<double>(a.bits[i]) - static_cast<double>(b.bits[i]));
    return 0.5 * s;
}

namespace {

std::vector<uint64_t> pack_code(const HashCode& code, int64_t words) {
    std::vector<uint64_t> packed(static_cast<size_t>(words), 0);
    for (int64_t i = 0; i < code.k(); ++i)
        if (code.bits[i] > 0) packed[static_cast<size_t>(i / 64)] |= 1ull << (i % 64);
    return packed;
}

}  // namespace

RetrievalIndex::RetrievalIndex(int64_t k, int64_t num_classes)
    : k_(k), num_classes_(num_classes), words_((k + 63) / 64) {
    if (k < 2) throw DimensionError("RetrievalIndex: k must be >= 2");
    if (num_classes < 1) throw DimensionError("RetrievalIndex: need at least one class");
}

void RetrievalIndex::add(int64_t id, const HashCode& code, const MultiLabelVector& labels) {
    if (code.k() != k_) throw DimensionError("RetrievalIndex::add: code length mismatch");
    if (labels.num_classes() != num_classes_)
        throw DimensionError("RetrievalIndex::add: label length mismatch");
    if (!labels.any()) throw InvalidValueError("RetrievalIndex::add: item without labels");
    for (int64_t existing : ids_)
        if (existing == id) throw InvalidValueError("RetrievalIndex::add: duplicate id");
    ids_.push_back(id);
    labels_.push_back(labels);
    auto packed = pack_code(code, words_);
    packed_.insert(packed_.end(), packed.begin(), packed.end());
}

HashCode RetrievalIndex::code_at(int64_t i) const {
    std::vector<int8_t> bits(static_cast<size_t>(k_));
    const uint64_t* words = packed_.data() + i * words_;
    for (int64_t b = 0; b < k_; ++b)
        bits[static_cast<size_t>(b)] = (words[b / 64] >> (b % 64)) & 1 ? int8_t{1} : int8_t{-1};
    return HashCode(std::move(bits));
}

std::vector<int32_t> RetrievalIndex::scan(const HashCode& query) const {
    if (query.k() != k_) throw DimensionError("RetrievalIndex::scan: query length mismatch");
    std::vector<int32_t> out(ids_.size());
    if (ids_.empty()) return out;
    auto packed = pack_code(query, words_);
    kernels::hamming_scan(packed_.data(), size(), words_, packed.data(), out.data());
    return out;
}

std::vector<int64_t> retrieve_topk(const RetrievalIndex& index, const HashCode& query, int64_t K) {
    if (index.size() == 0) throw EmptyIndexError("retrieve_topk: empty index");
    if (K < 1 || K > index.size())
        throw InvalidArgumentError("retrieve_topk: K out of range");
    std::vector<int32_t> dist = index.scan(query);
    std::vector<int64_t> order(dist.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return index.id_at(a) < index.id_at(b);
    });
    std::vector<int64_t> ids(static_cast<size_t>(K));
    for (int64_t i = 0; i < K; ++i) ids[static_cast<size_t>(i)] = index.id_at(order[i]);
    return ids;
}

namespace {

double average_precision(const RetrievalIndex& index, const HashCode& query,
                         const MultiLabelVector& target, int64_t K) {
    std::vector<int32_t> dist = index.scan(query);
    std::vector<int64_t> order(dist.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return index.id_at(a) < index.id_at(b);
    });
    double ap_sum = 0.0;
    int64_t relevant = 0;
    for (int64_t r = 0; r < K; ++r) {
        if (pairwise_similarity(index.labels_at(order[r]), target) == 1) {
            ++relevant;
            ap_sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
        }
    }
    return relevant == 0 ? 0.0 : ap_sum / static_cast<double>(relevant);
}

}  // namespace

TmapResult t_map_at_k(const RetrievalIndex& index,
                      const std::vector<std::pair<HashCode, MultiLabelVector>>& queries,
                      int64_t K) {
    if (queries.empty()) throw InvalidArgumentError("t_map_at_k: no queries");
    if (K < 1) throw InvalidArgumentError("t_map_at_k: K must be positive");
    if (index.size() == 0) throw EmptyIndexError("t_map_at_k: empty index");
    if (K > index.size()) throw InvalidArgumentError("t_map_at_k: K exceeds index size");

    TmapResult result;
    result.K = K;
    result.per_query_ap.assign(queries.size(), 0.0);
    const int64_t nq = static_cast<int64_t>(queries.size());
    // Per-query APs are independent; the mean below stays serial so the
    // reduction order is fixed.
    if (kernels::parallel_enabled() && nq > 1) {
#pragma omp parallel for schedule(dynamic)
        for (int64_t i = 0; i < nq; ++i)
            result.per_query_ap[static_cast<size_t>(i)] =
                average_precision(index, queries[static_cast<size_t>(i)].first,
                                  queries[static_cast<size_t>(i)].second, K);
    } else {
        for (int64_t i = 0; i < nq; ++i)
            result.per_query_ap[static_cast<size_t>(i)] =
                average_precision(index, queries[static_cast<size_t>(i)].first,
                                  queries[static_cast<size_t>(i)].second, K);
    }
    double sum = 0.0;
    for (double ap : result.per_query_ap) sum += ap;
    result.t_map = sum / static_cast<double>(nq);
    return result;
}

void RetrievalIndex::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("index: cannot open for write: " + path);
    os << "k=" << k_ << " C=" << num_classes_ << "\n";
    for (int64_t i = 0; i < size(); ++i) {
        os << ids_[static_cast<size_t>(i)] << '\t';
        const auto& labels = labels_[static_cast<size_t>(i)].bits;
        for (size_t j = 0; j < labels.size(); ++j) {
            if (j) os << ',';
            os << static_cast<int>(labels[j]);
        }
        os << '\t';
        HashCode code = code_at(i);
        for (int64_t j = 0; j < k_; ++j) {
            if (j) os << ',';
            os << static_cast<int>(code.bits[static_cast<size_t>(j)]);
        }
        os << '\n';
    }
    if (!os) throw IoError("index: write failed: " + path);
}

RetrievalIndex RetrievalIndex::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("index: cannot open: " + path);
    std::string header;
    if (!std::getline(is, header)) throw IoError("index: missing header");
    int64_t k = 0, c = 0;
    if (std::sscanf(header.c_str(), "k=%ld C=%ld", &k, &c) != 2)
        throw IoError("index: malformed header: " + header);
    RetrievalIndex index(k, c);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id_str, labels_str, bits_str;
        if (!std::getline(ls, id_str, '\t') || !std::getline(ls, labels_str, '\t') ||
            !std::getline(ls, bits_str))
            throw IoError("index: malformed line: " + line);
        int64_t id = std::stoll(id_str);
        MultiLabelVector labels;
        {
            std::istringstream fs(labels_str);
            std::string tok;
            while (std::getline(fs, tok, ',')) labels.bits.push_back(tok == "1" ? 1 : 0);
        }
        std::vector<int8_t> bits;
        {
            std::istringstream fs(bits_str);
            std::string tok;
            while (std::getline(fs, tok, ','))
                bits.push_back(static_cast<int8_t>(std::stoi(tok)));
        }
        index.add(id, HashCode(std::move(bits)), labels);
    }
    return index;
}

std::string metrics_report_json(const TmapResult& result) {
    nlohmann::json j;
    j["t_map"] = result.t_map;
    j["K"] = result.K;
    j["num_queries"] = static_cast<int64_t>(result.per_query_ap.size());
    j["per_query_ap"] = result.per_query_ap;
    return j.dump(2) + "\n";
}

TmapResult metrics_report_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    TmapResult r;
    r.t_map = j.at("t_map").get<double>();
    r.K = j.at("K").get<int64_t>();
    r.per_query_ap = j.at("per_query_ap").get<std::vector<double>>();
    return r;
}

}  // namespace hashlat
