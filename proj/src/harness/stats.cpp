#include "misical/harness/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "misical/errors.hpp"

namespace misical::harness {

double mean(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double median(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ValidationError("Welch t-test needs two samples per group");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = std::pow(sample_std(a), 2) / na;
    const double vb = std::pow(sample_std(b), 2) / nb;
    const double diff = mean(a) - mean(b);
    WelchResult r;
    if (va + vb == 0.0) {
        // Both groups constant: identical means are indistinguishable, different ones certain.
        r.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        r.df = na + nb - 2.0;
        r.p_value = diff == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = diff / std::sqrt(va + vb);
    r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    boost::math::students_t dist(r.df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
    std::vector<double> out(xs.size(), std::numeric_limits<double>::quiet_NaN());
    if (window == 0) return out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t j = lo; j <= i; ++j) {
            if (std::isnan(xs[j])) continue;
            sum += xs[j];
            ++n;
        }
        if (n > 0) out[i] = sum / static_cast<double>(n);
    }
    return out;
}

}  // namespace misical::harness
