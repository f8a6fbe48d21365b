#include "dgrd/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <stdexcept>

namespace dgrd {

std::vector<std::size_t> choose_dimensions(std::size_t input_size, std::size_t count, SeededRng& rng) {
    if (count == 0 || count > input_size) throw std::invalid_argument("choose_dimensions: bad dimension count");
    std::vector<std::size_t> all(input_size);
    std::iota(all.begin(), all.end(), std::size_t{0});
    shuffle(all, rng);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

GradientSampleSet sample_gradients(const ModelParams& params, const Tensor& x, std::size_t target,
                                   const Objective& objective, const ForwardMode& mode, std::size_t n_samples,
                                   const std::vector<std::size_t>& dims, const SeededRng& rng,
                                   std::size_t image_id) {
    if (n_samples < 2) throw std::invalid_argument("sample_gradients: need at least two samples");
    if (dims.empty()) throw std::invalid_argument("sample_gradients: no dimensions selected");
    for (std::size_t d : dims) {
        if (d >= x.size()) throw ShapeError("sample_gradients", "dimension index", x.size(), d);
    }
    validate_mode(mode);

    GradientSampleSet set;
    set.mode = mode_label(mode);
    set.image_id = image_id;
    set.seed = rng.seed();
    set.dims = dims;
    set.samples.assign(dims.size(), std::vector<double>(n_samples, 0.0));

#pragma omp parallel for schedule(dynamic)
    for (std::size_t s = 0; s < n_samples; ++s) {
        SeededRng sample_rng = rng.child(s);
        const Tensor g = input_gradient(params, x, target, objective, mode, sample_rng);
        for (std::size_t d = 0; d < dims.size(); ++d) set.samples[d][s] = g[dims[d]];
    }
    return set;
}

double sample_variance(const std::vector<double>& values) {
    if (values.size() < 2) throw std::invalid_argument("sample_variance: need at least two values");
    // Welford; exact zero for constant input.
    double mean = 0.0, ss = 0.0, n = 0.0;
    for (double v : values) {
        n += 1.0;
        const double delta = v - mean;
        mean += delta / n;
        ss += delta * (v - mean);
    }
    return ss / (n - 1.0);
}

std::vector<VarianceRow> variance_summary(const std::vector<GradientSampleSet>& sets) {
    if (sets.empty()) throw std::invalid_argument("variance_summary: no sample sets");
    std::vector<VarianceRow> rows;
    for (const auto& set : sets) {
        VarianceRow row;
        row.mode = set.mode;
        for (const auto& s : set.samples) row.variances.push_back(sample_variance(s));
        row.mean_variance = row.variances.empty()
                                ? 0.0
                                : std::accumulate(row.variances.begin(), row.variances.end(), 0.0) /
                                      static_cast<double>(row.variances.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

Histogram histogram(const std::vector<double>& values, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    if (values.empty()) return h;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    h.lo = *lo;
    h.hi = *hi;
    const double width = (h.hi - h.lo) / static_cast<double>(bins);
    for (double v : values) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - h.lo) / width) : 0;
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

void write_samples_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets) {
    const auto flags = out.flags();
    out << "mode,dim_index,sample_index,value\n" << std::scientific << std::setprecision(10);
    for (const auto& set : sets) {
        for (std::size_t d = 0; d < set.dims.size(); ++d) {
            for (std::size_t s = 0; s < set.samples[d].size(); ++s) {
                out << set.mode << ',' << set.dims[d] << ',' << s << ',' << set.samples[d][s] << '\n';
            }
        }
    }
    out.flags(flags);
}

void write_variance_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets) {
    const auto rows = variance_summary(sets);
    const auto flags = out.flags();
    out << "mode,mean_variance";
    for (std::size_t d : sets.front().dims) out << ",var_" << d;
    out << '\n' << std::scientific << std::setprecision(10);
    for (const auto& row : rows) {
        out << row.mode << ',' << row.mean_variance;
        for (double v : row.variances) out << ',' << v;
        out << '\n';
    }
    out.flags(flags);
}

void write_histogram_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets, std::size_t bins) {
    const auto flags = out.flags();
    out << "mode,dim_index,bin,lo,hi,count\n" << std::scientific << std::setprecision(10);
    for (const auto& set : sets) {
        for (std::size_t d = 0; d < set.dims.size(); ++d) {
            const Histogram h = histogram(set.samples[d], bins);
            const double width = (h.hi - h.lo) / static_cast<double>(bins);
            for (std::size_t b = 0; b < bins; ++b) {
                out << set.mode << ',' << set.dims[d] << ',' << b << ',' << h.lo + width * static_cast<double>(b)
                    << ',' << h.lo + width * static_cast<double>(b + 1) << ',' << h.counts[b] << '\n';
            }
        }
    }
    out.flags(flags);
}

}  // namespace dgrd
