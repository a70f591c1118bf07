#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hashlat/core/errors.hpp"

namespace hashlat {

// Multi-label class membership flags, one 0/1 entry per class.
struct MultiLabelVector {
    std::vector<uint8_t> bits;

    MultiLabelVector() = default;
    explicit MultiLabelVector(std::vector<uint8_t> b) : bits(std::move(b)) {}

    int64_t num_classes() const { return static_cast<int64_t>(bits.size()); }
    bool any() const;
    bool intersects(const MultiLabelVector& other) const;
    bool operator==(const MultiLabelVector& other) const { return bits == other.bits; }
};

// Binary code over {-1,+1}. Stored as small ints at the API surface; the
// retrieval index bit-packs internally.
struct HashCode {
    std::vector<int8_t> bits;

    HashCode() = default;
    explicit HashCode(std::vector<int8_t> b);

    int64_t k() const { return static_cast<int64_t>(bits.size()); }
    bool operator==(const HashCode& other) const { return bits == other.bits; }
};

// Pre-binarization model output.
struct ContinuousCode {
    std::vector<double> values;

    ContinuousCode() = default;
    explicit ContinuousCode(std::vector<double> v) : values(std::move(v)) {}
    int64_t k() const { return static_cast<int64_t>(values.size()); }
};

// 1 iff the two label sets share at least one class.
int pairwise_similarity(const MultiLabelVector& a, const MultiLabelVector& b);

// Element-wise sign with sign(0) := +1 (fixed tie-break so binarization is
// deterministic). NaN input raises InvalidValueError.
HashCode sign_binarize(const ContinuousCode& c);

// (1/2) * sum |a_l - b_l|; equals (k - a.b)/2, integer-valued in [0, k].
double hamming_distance(const HashCode& a, const HashCode& b);

// Immutable after construction; concurrent read-only queries are safe.
class RetrievalIndex {
public:
    RetrievalIndex(int64_t k, int64_t num_classes);

    void add(int64_t id, const HashCode& code, const MultiLabelVector& labels);

    int64_t size() const { return static_cast<int64_t>(ids_.size()); }
    int64_t k() const { return k_; }
    int64_t num_classes() const { return num_classes_; }

    int64_t id_at(int64_t i) const { return ids_[static_cast<size_t>(i)]; }
    const MultiLabelVector& labels_at(int64_t i) const { return labels_[static_cast<size_t>(i)]; }
    HashCode code_at(int64_t i) const;

    // Hamming distances from query to every entry, in entry order.
    std::vector<int32_t> scan(const HashCode& query) const;

    void save(const std::string& path) const;
    static RetrievalIndex load(const std::string& path);

private:
    int64_t k_ = 0;
    int64_t num_classes_ = 0;
    int64_t words_ = 0;  // packed 64-bit words per code
    std::vector<int64_t> ids_;
    std::vector<MultiLabelVector> labels_;
    std::vector<uint64_t> packed_;  // +1 -> bit set
};

// Ids of the K nearest entries, ascending Hamming distance, ties broken by
// ascending id.
std::vector<int64_t> retrieve_topk(const RetrievalIndex& index, const HashCode& query, int64_t K);

struct TmapResult {
    double t_map = 0.0;
    int64_t K = 0;
    std::vector<double> per_query_ap;
};

// Target mean average precision: relevance of a retrieved item is
// pairwise_similarity(item.labels, target_label); AP over the ranked top-K
// list, 0 when nothing relevant is retrieved; mean over queries.
TmapResult t_map_at_k(const RetrievalIndex& index,
                      const std::vector<std::pair<HashCode, MultiLabelVector>>& queries,
                      int64_t K);

// {"t_map": ..., "K": ..., "num_queries": ..., "per_query_ap": [...]}
std::string metrics_report_json(const TmapResult& result);
TmapResult metrics_report_from_json(const std::string& json_text);

}  // namespace hashlat
