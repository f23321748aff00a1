// Dense complex linear algebra: Hermitian eigensystems, matrix
// functions, tensor products, partial traces, vectorization, operator norms.
//
// Vectorization is column-stacking throughout the project:
//   vec(X)[i + j*rows] = X(i, j),   vec(A X B) = (B^T ⊗ A) vec(X).
// Composite spaces are ordered bath ⊗ system, so a full-space index is
// r * d_sys + sigma.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>
#include <cstddef>
#include <random>
#include <string>
#include <utility>

#include "isotherm/errors.hpp"

namespace isotherm {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr cplx kI{0.0, 1.0};

} // namespace isotherm

namespace isotherm::linop {

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kDensityTol = 1e-12;
inline constexpr double kLogClip = 1e-14;

namespace detail {

inline bool all_finite(const Matrix& m) {
    return m.allFinite();
}

// Relative anti-Hermitian defect, measured against the Frobenius scale of m.
inline double hermitian_defect(const Matrix& m) {
    const double scale = std::max(1.0, m.norm());
    return (m - m.adjoint()).norm() / scale;
}

inline void require_square(const Matrix& m, const char* who) {
    if (m.rows() != m.cols() || m.rows() == 0) {
        throw InvalidInput(std::string(who) + ": expected a non-empty square matrix");
    }
}

} // namespace detail

// Square matrix equal to its adjoint. Construction symmetrizes after checking.
class HermitianMatrix {
public:
    HermitianMatrix() = default;

    explicit HermitianMatrix(const Matrix& m, double tol = kHermitianTol) {
        detail::require_square(m, "HermitianMatrix");
        if (!detail::all_finite(m)) throw InvalidInput("HermitianMatrix: non-finite entries");
        if (detail::hermitian_defect(m) > tol) {
            throw InvalidInput("HermitianMatrix: input is not Hermitian within tolerance");
        }
        m_ = 0.5 * (m + m.adjoint());
    }

    const Matrix& matrix() const noexcept { return m_; }
    Index dim() const noexcept { return m_.rows(); }

private:
    Matrix m_;
};

// Hermitian, positive semidefinite, unit trace.
class DensityMatrix {
public:
    DensityMatrix() = default;

    explicit DensityMatrix(const Matrix& m, double tol = kDensityTol) {
        HermitianMatrix h(m, tol);
        const double tr = h.matrix().trace().real();
        if (std::abs(tr - 1.0) > tol) {
            throw InvalidInput("DensityMatrix: trace differs from 1 by " + std::to_string(tr - 1.0));
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(h.matrix(), Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -tol) {
            throw InvalidInput("DensityMatrix: negative eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
        }
        m_ = h.matrix();
    }

    const Matrix& matrix() const noexcept { return m_; }
    Index dim() const noexcept { return m_.rows(); }

private:
    Matrix m_;
};

struct Eigensystem {
    RealVector values;   // ascending
    Matrix vectors;      // columns are orthonormal eigenvectors
};

inline Eigensystem eig_hermitian(const HermitianMatrix& h) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h.matrix());
    if (es.info() != Eigen::Success) throw DomainError("eig_hermitian: eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

inline Eigensystem eig_hermitian(const Matrix& m) {
    return eig_hermitian(HermitianMatrix(m));
}

// V f(Λ) V†. Throws DomainError if f is not finite somewhere on the spectrum.
template <class F>
HermitianMatrix matrix_function(const Eigensystem& es, F&& f) {
    RealVector fv(es.values.size());
    for (Index i = 0; i < es.values.size(); ++i) {
        fv(i) = f(es.values(i));
        if (!std::isfinite(fv(i))) {
            throw DomainError("matrix_function: f undefined at eigenvalue " + std::to_string(es.values(i)));
        }
    }
    Matrix out = es.vectors * fv.cast<cplx>().asDiagonal() * es.vectors.adjoint();
    return HermitianMatrix(0.5 * (out + out.adjoint()));
}

template <class F>
HermitianMatrix matrix_function(const HermitianMatrix& h, F&& f) {
    return matrix_function(eig_hermitian(h), std::forward<F>(f));
}

struct ClippedLog {
    HermitianMatrix value;
    std::size_t clipped = 0;
};

// Matrix logarithm of a positive semidefinite operator. Eigenvalues in
// [-kLogClip, kLogClip] are raised to kLogClip and counted; anything more
// negative is a domain error.
inline ClippedLog matrix_log_clipped(const HermitianMatrix& h) {
    const Eigensystem es = eig_hermitian(h);
    std::size_t clipped = 0;
    RealVector lv(es.values.size());
    for (Index i = 0; i < es.values.size(); ++i) {
        double x = es.values(i);
        if (x < -kLogClip) {
            throw DomainError("matrix_log_clipped: eigenvalue " + std::to_string(x) + " below clip window");
        }
        if (x <= kLogClip) {
            x = kLogClip;
            ++clipped;
        }
        lv(i) = std::log(x);
    }
    Matrix out = es.vectors * lv.cast<cplx>().asDiagonal() * es.vectors.adjoint();
    return {HermitianMatrix(0.5 * (out + out.adjoint())), clipped};
}

inline Matrix commutator(const Matrix& a, const Matrix& b) {
    detail::require_square(a, "commutator");
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidInput("commutator: dimension mismatch");
    }
    return a * b - b * a;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    k = Eigen::kroneckerProduct(a, b);
    return k;
}

enum class Subsystem { bath, system };

struct SplitDims {
    Index bath;
    Index system;
};

inline Matrix partial_trace(const Matrix& rho, SplitDims dims, Subsystem keep) {
    detail::require_square(rho, "partial_trace");
    if (dims.bath <= 0 || dims.system <= 0 || dims.bath * dims.system != rho.rows()) {
        throw InvalidInput("partial_trace: dims do not multiply to the matrix dimension");
    }
    const Index dr = dims.bath;
    const Index ds = dims.system;
    if (keep == Subsystem::system) {
        Matrix out = Matrix::Zero(ds, ds);
        for (Index r = 0; r < dr; ++r) out += rho.block(r * ds, r * ds, ds, ds);
        return out;
    }
    Matrix out(dr, dr);
    for (Index r = 0; r < dr; ++r)
        for (Index q = 0; q < dr; ++q) out(r, q) = rho.block(r * ds, q * ds, ds, ds).trace();
    return out;
}

inline DensityMatrix partial_trace(const DensityMatrix& rho, SplitDims dims, Subsystem keep) {
    return DensityMatrix(partial_trace(rho.matrix(), dims, keep), 1e-10);
}

inline Vector vec(const Matrix& x) {
    return Eigen::Map<const Vector>(x.data(), x.size());
}

inline Matrix unvec(const Vector& v, Index rows) {
    if (rows <= 0 || v.size() % rows != 0) throw InvalidInput("unvec: length not divisible by row count");
    return Eigen::Map<const Matrix>(v.data(), rows, v.size() / rows);
}

// Square unvec; the length must be a perfect square.
inline Matrix unvec(const Vector& v) {
    const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
    if (d * d != v.size() || d == 0) throw InvalidInput("unvec: length is not a perfect square");
    return unvec(v, d);
}

// Superoperator of X ↦ [H, X] under column stacking: 1 ⊗ H − H^T ⊗ 1.
inline Matrix commutator_superoperator(const Matrix& h) {
    detail::require_square(h, "commutator_superoperator");
    const Matrix id = Matrix::Identity(h.rows(), h.cols());
    return kron(id, h) - kron(h.transpose(), id);
}

// Largest singular value.
inline double operator_norm(const Matrix& a) {
    if (!detail::all_finite(a)) throw InvalidInput("operator_norm: non-finite entries");
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(a);
    return svd.singularValues()(0);
}

// Operator norm of a Hermitian matrix: max |eigenvalue|, cheaper than an SVD.
inline double hermitian_norm(const Matrix& h) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// exp(-i t H) for Hermitian H via its eigensystem.
inline Matrix unitary_exp(const Matrix& h, double t) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    Vector phases(es.eigenvalues().size());
    for (Index i = 0; i < phases.size(); ++i) phases(i) = std::exp(-kI * (t * es.eigenvalues()(i)));
    return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

// ---------------------------------------------------------------------------
// Seeded random inputs

using Rng = std::mt19937_64;

// Entries with E|z|^2 = 1.
inline Matrix random_complex_normal(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    Matrix g(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) g(i, j) = cplx(n(rng), n(rng));
    return g;
}

inline HermitianMatrix random_hermitian(Index dim, Rng& rng) {
    const Matrix g = random_complex_normal(dim, dim, rng);
    return HermitianMatrix(0.5 * (g + g.adjoint()));
}

inline DensityMatrix random_density(Index dim, Rng& rng) {
    const Matrix g = random_complex_normal(dim, dim, rng);
    Matrix rho = g * g.adjoint();
    rho /= rho.trace().real();
    return DensityMatrix(0.5 * (rho + rho.adjoint()));
}

inline Vector random_unit_vector(Index dim, Rng& rng) {
    Vector v = random_complex_normal(dim, 1, rng);
    return v / v.norm();
}

} // namespace isotherm::linop
