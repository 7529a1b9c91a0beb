#pragma once

// Checks residual + b a against w0 entry by entry.
//
// Where b a lies within a factor of two of w0 (same sign) the subtraction
// that produced the residual is exact, so the sum must reproduce w0 bit for
// bit. Elsewhere a double residual cannot always absorb the subtraction's
// rounding, and the sum must instead land within one ulp of the largest
// magnitude involved.

#include <cmath>
#include <cstddef>
#include <limits>

#include "inilora/matrix.hpp"

namespace inilora::testing {

struct ReconstructionCheck {
    std::size_t entries = 0;
    std::size_t exact = 0;
    std::size_t guaranteed = 0;          // entries where exactness is guaranteed
    std::size_t guaranteed_inexact = 0;  // must stay zero
    std::size_t beyond_ulp = 0;          // must stay zero
    double max_abs_error = 0.0;

    bool ok() const noexcept { return guaranteed_inexact == 0 && beyond_ulp == 0; }
    bool bitwise_exact() const noexcept { return exact == entries; }
};

inline double ulp_of(double v) {
    v = std::abs(v);
    return std::nextafter(v, std::numeric_limits<double>::infinity()) - v;
}

inline ReconstructionCheck check_reconstruction(const Matrix& w0, const Matrix& residual,
                                                const Matrix& a, const Matrix& b) {
    const Matrix product = matmul(b, a);
    ReconstructionCheck out;
    auto x = w0.values();
    auto r = residual.values();
    auto p = product.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double sum = r[i] + p[i];
        const double err = std::abs(sum - x[i]);
        ++out.entries;
        out.exact += err == 0.0 ? 1 : 0;
        out.max_abs_error = std::max(out.max_abs_error, err);
        const bool same_sign = (x[i] > 0.0 && p[i] > 0.0) || (x[i] < 0.0 && p[i] < 0.0);
        const double ax = std::abs(x[i]), ap = std::abs(p[i]);
        if (x[i] == p[i] || p[i] == 0.0 || (same_sign && ap / 2.0 <= ax && ax <= 2.0 * ap)) {
            ++out.guaranteed;
            out.guaranteed_inexact += err == 0.0 ? 0 : 1;
        }
        const double bound = ulp_of(std::max({std::abs(r[i]), ap, ax}));
        out.beyond_ulp += err <= bound ? 0 : 1;
    }
    return out;
}

}  // namespace inilora::testing
