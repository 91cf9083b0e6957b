#ifndef SPLITPLOT_DISTRIBUTIONS_HPP
#define SPLITPLOT_DISTRIBUTIONS_HPP

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>

#include "errors.hpp"

namespace splitplot {

inline void check_dof(double f) {
    if (!(f > 0.0) || !std::isfinite(f)) throw Error(ErrorKind::invalid_parameter, "degrees of freedom must be > 0");
}

inline void check_prob(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::invalid_parameter, "probability must lie in (0,1)");
}

inline double chi2_cdf(double f, double x) {
    check_dof(f);
    if (std::isnan(x)) throw Error(ErrorKind::invalid_parameter, "x is NaN");
    if (x <= 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return boost::math::cdf(boost::math::chi_squared_distribution<double>(f), x);
}

// Upper tail 1 - F(x), accurate far in the tail.
inline double chi2_sf(double f, double x) {
    check_dof(f);
    if (std::isnan(x)) throw Error(ErrorKind::invalid_parameter, "x is NaN");
    if (x <= 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(f), x));
}

inline double chi2_quantile(double f, double p) {
    check_dof(f);
    check_prob(p);
    return boost::math::quantile(boost::math::chi_squared_distribution<double>(f), p);
}

inline double normal_cdf(double x) {
    if (std::isnan(x)) throw Error(ErrorKind::invalid_parameter, "x is NaN");
    if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
    return boost::math::cdf(boost::math::normal_distribution<double>(), x);
}

inline double normal_sf(double x) {
    if (std::isnan(x)) throw Error(ErrorKind::invalid_parameter, "x is NaN");
    if (std::isinf(x)) return x > 0 ? 0.0 : 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), x));
}

inline double normal_quantile(double p) {
    check_prob(p);
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace splitplot

#endif
