#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dgrd/network.hpp"

namespace dgrd {

/// Input-gradient samples restricted to a few input dimensions.
struct GradientSampleSet {
    std::string mode;
    std::size_t image_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> dims;
    std::vector<std::vector<double>> samples;  // samples[d][s], one list per dim

    std::size_t sample_count() const { return samples.empty() ? 0 : samples.front().size(); }
};

/// `count` distinct input indices drawn uniformly without replacement,
/// returned in increasing order.
std::vector<std::size_t> choose_dimensions(std::size_t input_size, std::size_t count, SeededRng& rng);

/// n_samples single-sub-network gradients of the objective toward `target`.
/// Sample s draws its sub-network from rng.child(s). Throws
/// std::invalid_argument when n_samples < 2, dims is empty or out of range.
GradientSampleSet sample_gradients(const ModelParams& params, const Tensor& x, std::size_t target,
                                   const Objective& objective, const ForwardMode& mode, std::size_t n_samples,
                                   const std::vector<std::size_t>& dims, const SeededRng& rng,
                                   std::size_t image_id = 0);

/// Unbiased sample variance; needs at least two values.
double sample_variance(const std::vector<double>& values);

struct VarianceRow {
    std::string mode;
    double mean_variance = 0.0;
    std::vector<double> variances;  // per dim, same order as the set
};
std::vector<VarianceRow> variance_summary(const std::vector<GradientSampleSet>& sets);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;
};
/// Uniform bins over [min, max] of the values; the maximum lands in the last
/// bin. A constant sample puts everything in the first bin.
Histogram histogram(const std::vector<double>& values, std::size_t bins = 20);

/// mode,dim_index,sample_index,value
void write_samples_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets);
/// mode,mean_variance,var_<dim>...; one row per set
void write_variance_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets);
/// mode,dim_index,bin,lo,hi,count
void write_histogram_csv(std::ostream& out, const std::vector<GradientSampleSet>& sets, std::size_t bins = 20);

}  // namespace dgrd
