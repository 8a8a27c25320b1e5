#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Radial basis function families. The four smooth families carry a shape
/// parameter; the piecewise-smooth splines carry an integer exponent index k.
enum class RbfFamily : std::uint8_t { GA, MQ, IMQ, IQ, PhsOdd, Tps };

struct KernelError : std::domain_error {
    using std::domain_error::domain_error;
};

/// An RBF family together with its parameters. All admitted kernels satisfy
/// Phi'(0) = 0, which is required whenever normal-derivative rows enter the
/// interpolation matrix; construction rejects anything else (e.g. Phi(r) = r).
class KernelSpec {
public:
    static KernelSpec ga(double eps) { return {RbfFamily::GA, eps, 0}; }
    static KernelSpec mq(double eps) { return {RbfFamily::MQ, eps, 0}; }
    static KernelSpec imq(double eps) { return {RbfFamily::IMQ, eps, 0}; }
    static KernelSpec iq(double eps) { return {RbfFamily::IQ, eps, 0}; }
    /// Monomial polyharmonic spline r^(2k+1); exponent = 2k+1 must be odd and >= 3.
    static KernelSpec phs(int exponent) {
        if (exponent < 3 || exponent % 2 == 0)
            throw KernelError("phs exponent must be odd and >= 3 (Phi'(0)=0 fails otherwise)");
        return {RbfFamily::PhsOdd, 0.0, (exponent - 1) / 2};
    }
    /// Thin plate spline r^(2k) log r, k >= 1.
    static KernelSpec tps(int k) {
        if (k < 1) throw KernelError("tps requires k >= 1");
        return {RbfFamily::Tps, 0.0, k};
    }

    RbfFamily family() const { return family_; }
    double shape() const { return shape_; }
    int k() const { return k_; }

    bool is_smooth() const {
        return family_ == RbfFamily::GA || family_ == RbfFamily::MQ ||
               family_ == RbfFamily::IMQ || family_ == RbfFamily::IQ;
    }

    /// Order of conditional positive definiteness (0 = strictly positive
    /// definite). Schur-complement analysis requires order <= 1 so that the
    /// all-interior block is nonsingular on its own.
    int conditional_order() const {
        switch (family_) {
            case RbfFamily::GA:
            case RbfFamily::IMQ:
            case RbfFamily::IQ: return 0;
            case RbfFamily::MQ: return 1;
            case RbfFamily::PhsOdd:
            case RbfFamily::Tps: return k_ + 1;
        }
        return 0;
    }

    std::string name() const {
        switch (family_) {
            case RbfFamily::GA: return "ga";
            case RbfFamily::MQ: return "mq";
            case RbfFamily::IMQ: return "imq";
            case RbfFamily::IQ: return "iq";
            case RbfFamily::PhsOdd: return "phs" + std::to_string(2 * k_ + 1);
            case RbfFamily::Tps: return "tps" + std::to_string(k_);
        }
        return "?";
    }

private:
    KernelSpec(RbfFamily family, double shape, int k) : family_(family), shape_(shape), k_(k) {
        if (is_smooth() && !(shape > 0.0 && std::isfinite(shape)))
            throw KernelError("shape parameter must be positive and finite");
    }

    RbfFamily family_;
    double shape_;
    int k_;
};

/// Parses a kernel name as used on the command line: ga, mq, imq, iq,
/// phs<odd exponent>, tps<k>. The shape is given as the dimensionless product
/// eps*s and converted with the node spacing s.
inline KernelSpec parse_kernel(const std::string& name, double eps_s, double spacing) {
    auto suffix_int = [&](std::size_t prefix_len) {
        int v = 0;
        try {
            v = std::stoi(name.substr(prefix_len));
        } catch (const std::exception&) {
            throw KernelError("bad kernel name: " + name);
        }
        return v;
    };
    if (name == "ga" || name == "mq" || name == "imq" || name == "iq") {
        if (!(spacing > 0.0)) throw KernelError("spacing must be positive");
        const double eps = eps_s / spacing;
        if (name == "ga") return KernelSpec::ga(eps);
        if (name == "mq") return KernelSpec::mq(eps);
        if (name == "imq") return KernelSpec::imq(eps);
        return KernelSpec::iq(eps);
    }
    if (name.rfind("phs", 0) == 0) return KernelSpec::phs(suffix_int(3));
    if (name.rfind("tps", 0) == 0) return KernelSpec::tps(suffix_int(3));
    throw KernelError("unknown kernel: " + name);
}

namespace detail {
inline void check_radius(double r) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw KernelError("radius must be finite and nonnegative");
}
}  // namespace detail

/// Phi(r) for the kernel's closed form.
inline double phi(const KernelSpec& k, double r) {
    detail::check_radius(r);
    const double e = k.shape();
    switch (k.family()) {
        case RbfFamily::GA: return std::exp(-(e * r) * (e * r));
        case RbfFamily::MQ: return std::sqrt(1.0 + (e * r) * (e * r));
        case RbfFamily::IMQ: return 1.0 / std::sqrt(1.0 + (e * r) * (e * r));
        case RbfFamily::IQ: return 1.0 / (1.0 + (e * r) * (e * r));
        case RbfFamily::PhsOdd: return std::pow(r, 2 * k.k() + 1);
        case RbfFamily::Tps: return r == 0.0 ? 0.0 : std::pow(r, 2 * k.k()) * std::log(r);
    }
    return 0.0;
}

/// Phi'(r); exactly zero at r = 0 for every admitted family.
inline double phi_prime(const KernelSpec& k, double r) {
    detail::check_radius(r);
    if (r == 0.0) return 0.0;
    const double e = k.shape(), e2 = e * e;
    switch (k.family()) {
        case RbfFamily::GA: return -2.0 * e2 * r * std::exp(-e2 * r * r);
        case RbfFamily::MQ: return e2 * r / std::sqrt(1.0 + e2 * r * r);
        case RbfFamily::IMQ: return -e2 * r * std::pow(1.0 + e2 * r * r, -1.5);
        case RbfFamily::IQ: {
            const double t = 1.0 + e2 * r * r;
            return -2.0 * e2 * r / (t * t);
        }
        case RbfFamily::PhsOdd: {
            const int p = 2 * k.k() + 1;
            return p * std::pow(r, p - 1);
        }
        case RbfFamily::Tps: {
            const int kk = k.k();
            return std::pow(r, 2 * kk - 1) * (2.0 * kk * std::log(r) + 1.0);
        }
    }
    return 0.0;
}

/// Phi''(r). For TPS with k = 1 the value diverges as r -> 0; callers hitting
/// that case get a KernelError from rbf_laplacian/rbf_hessian.
inline double phi_second(const KernelSpec& k, double r) {
    detail::check_radius(r);
    const double e = k.shape(), e2 = e * e;
    switch (k.family()) {
        case RbfFamily::GA: {
            const double q = e2 * r * r;
            return (4.0 * q - 2.0) * e2 * std::exp(-q);
        }
        case RbfFamily::MQ: return e2 * std::pow(1.0 + e2 * r * r, -1.5);
        case RbfFamily::IMQ: {
            const double t = 1.0 + e2 * r * r;
            return e2 * (2.0 * e2 * r * r - 1.0) * std::pow(t, -2.5);
        }
        case RbfFamily::IQ: {
            const double t = 1.0 + e2 * r * r;
            return e2 * (6.0 * e2 * r * r - 2.0) / (t * t * t);
        }
        case RbfFamily::PhsOdd: {
            const int p = 2 * k.k() + 1;
            return r == 0.0 && p < 2 ? 0.0 : p * (p - 1) * std::pow(r, p - 2);
        }
        case RbfFamily::Tps: {
            const int kk = k.k();
            if (r == 0.0) {
                if (kk == 1) throw KernelError("tps1 second derivative diverges at r = 0");
                return 0.0;
            }
            return std::pow(r, 2 * kk - 2) * (2.0 * kk * (2.0 * kk - 1.0) * std::log(r) + 4.0 * kk - 1.0);
        }
    }
    return 0.0;
}

/// Gradient of x -> Phi(||x - center||) at x; zero vector when x == center.
inline Vector rbf_gradient(const KernelSpec& k, const Vector& center, const Vector& x) {
    if (center.size() != x.size()) throw KernelError("dimension mismatch");
    const Vector diff = x - center;
    const double r = diff.norm();
    if (r == 0.0) return Vector::Zero(x.size());
    return (phi_prime(k, r) / r) * diff;
}

/// Laplacian of x -> Phi(||x - center||) at x: Phi''(r) + (d-1) Phi'(r)/r,
/// with the analytic limit d * Phi''(0) at r = 0.
inline double rbf_laplacian(const KernelSpec& k, const Vector& center, const Vector& x) {
    if (center.size() != x.size()) throw KernelError("dimension mismatch");
    const double d = static_cast<double>(x.size());
    const double r = (x - center).norm();
    if (r == 0.0) return d * phi_second(k, 0.0);
    const double value = phi_second(k, r) + (d - 1.0) * phi_prime(k, r) / r;
    if (!std::isfinite(value)) throw KernelError("non-finite laplacian value");
    return value;
}

/// Hessian of x -> Phi(||x - center||) at x. Used by the boundary-placement
/// sensitivities, where matrix entries are differentiated in node positions.
inline Matrix rbf_hessian(const KernelSpec& k, const Vector& center, const Vector& x) {
    if (center.size() != x.size()) throw KernelError("dimension mismatch");
    const Index d = x.size();
    const Vector diff = x - center;
    const double r = diff.norm();
    if (r == 0.0) return phi_second(k, 0.0) * Matrix::Identity(d, d);
    const Vector e = diff / r;
    const double fpp = phi_second(k, r);
    const double fp_over_r = phi_prime(k, r) / r;
    return fpp * (e * e.transpose()) + fp_over_r * (Matrix::Identity(d, d) - e * e.transpose());
}

/// Monomial basis of the polynomial space of total degree <= P in d variables,
/// enumerated in graded-lexicographic order (so p_1 == 1). size() == C(P+d, d).
class PolyBasis {
public:
    PolyBasis(int degree, int dim) : degree_(degree), dim_(dim) {
        if (dim < 1) throw KernelError("polynomial basis needs dim >= 1");
        if (degree >= 0) {
            std::vector<int> expo(static_cast<std::size_t>(dim), 0);
            for (int total = 0; total <= degree; ++total) enumerate(total, 0, total, expo);
        }
    }

    /// Empty basis (q = 0), used when no augmentation is requested.
    static PolyBasis none(int dim) { return PolyBasis(-1, dim); }

    int degree() const { return degree_; }
    int dim() const { return dim_; }
    Index size() const { return static_cast<Index>(exponents_.size()); }
    const std::vector<int>& exponents(Index j) const { return exponents_.at(static_cast<std::size_t>(j)); }

    double eval(Index j, const Vector& x) const {
        const auto& e = exponents(j);
        double v = 1.0;
        for (int a = 0; a < dim_; ++a) v *= ipow(x[a], e[static_cast<std::size_t>(a)]);
        return v;
    }

    Vector gradient(Index j, const Vector& x) const {
        const auto& e = exponents(j);
        Vector g = Vector::Zero(dim_);
        for (int a = 0; a < dim_; ++a) {
            const int ea = e[static_cast<std::size_t>(a)];
            if (ea == 0) continue;
            double v = ea * ipow(x[a], ea - 1);
            for (int b = 0; b < dim_; ++b)
                if (b != a) v *= ipow(x[b], e[static_cast<std::size_t>(b)]);
            g[a] = v;
        }
        return g;
    }

    double laplacian(Index j, const Vector& x) const {
        const auto& e = exponents(j);
        double sum = 0.0;
        for (int a = 0; a < dim_; ++a) {
            const int ea = e[static_cast<std::size_t>(a)];
            if (ea < 2) continue;
            double v = ea * (ea - 1) * ipow(x[a], ea - 2);
            for (int b = 0; b < dim_; ++b)
                if (b != a) v *= ipow(x[b], e[static_cast<std::size_t>(b)]);
            sum += v;
        }
        return sum;
    }

private:
    static double ipow(double x, int n) {
        double v = 1.0;
        for (int i = 0; i < n; ++i) v *= x;
        return v;
    }

    // Within each total degree, tuples are listed lexicographically descending
    // in the leading exponents: 1; x, y; x^2, xy, y^2; ...
    void enumerate(int remaining, int axis, int total, std::vector<int>& expo) {
        if (axis == dim_ - 1) {
            expo[static_cast<std::size_t>(axis)] = remaining;
            (void)total;
            exponents_.push_back(expo);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            expo[static_cast<std::size_t>(axis)] = e;
            enumerate(remaining - e, axis + 1, total, expo);
        }
        expo[static_cast<std::size_t>(axis)] = 0;
    }

    int degree_;
    int dim_;
    std::vector<std::vector<int>> exponents_;
};

}  // namespace nrbf
