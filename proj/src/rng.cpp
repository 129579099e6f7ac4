#include "logshe/rng.hpp"

#include "logshe/special.hpp"

#include <cmath>

namespace logshe {

double Rng::next_normal() {
    return normal_quantile(next_uniform());
}

double ErrorDistribution::draw(Rng& rng) const {
    switch (kind) {
    case ErrorKind::StdNormal:
        return rng.next_normal();
    case ErrorKind::MixedNormal: {
        // equal-weight mixture of N(+a/c, b/c^2) and N(-a/c, b/c^2), c = sqrt(a^2+b),
        // which has mean 0 and variance 1
        const double c = std::sqrt(a * a + b);
        const double sign = (rng.next_uniform() < 0.5) ? 1.0 : -1.0;
        return sign * a / c + std::sqrt(b) / c * rng.next_normal();
    }
    case ErrorKind::Uniform: {
        const double s = std::sqrt(3.0);
        return s * (2.0 * rng.next_uniform() - 1.0);
    }
    }
    return 0.0;
}

} // namespace logshe
