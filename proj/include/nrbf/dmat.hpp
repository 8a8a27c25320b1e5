#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace nrbf {

/// A matrix whose entries are d-dimensional vectors, together with the small
/// algebra needed by the boundary-normal analysis: scaling, addition, right
/// multiplication by a real matrix, and the contraction H(A, V) = (a_ij . v_i).
class DMat {
public:
    DMat(Eigen::Index rows, Eigen::Index cols, Eigen::Index dim)
        : rows_(rows), cols_(cols), dim_(dim),
          data_(static_cast<std::size_t>(rows * cols), Eigen::VectorXd::Zero(dim)) {
        if (rows < 0 || cols < 0 || dim < 1) throw std::invalid_argument("bad DMat shape");
    }

    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    Eigen::Index dim() const { return dim_; }

    Eigen::VectorXd& at(Eigen::Index i, Eigen::Index j) {
        return data_[static_cast<std::size_t>(i * cols_ + j)];
    }
    const Eigen::VectorXd& at(Eigen::Index i, Eigen::Index j) const {
        return data_[static_cast<std::size_t>(i * cols_ + j)];
    }

    /// Removes row i and column i (both), keeping entry order.
    DMat without(Eigen::Index idx) const {
        DMat out(rows_ - 1, cols_ - 1, dim_);
        for (Eigen::Index i = 0, oi = 0; i < rows_; ++i) {
            if (i == idx) continue;
            for (Eigen::Index j = 0, oj = 0; j < cols_; ++j) {
                if (j == idx) continue;
                out.at(oi, oj) = at(i, j);
                ++oj;
            }
            ++oi;
        }
        return out;
    }

private:
    Eigen::Index rows_, cols_, dim_;
    std::vector<Eigen::VectorXd> data_;
};

inline DMat dmat_scale(const DMat& a, double lambda) {
    DMat out(a.rows(), a.cols(), a.dim());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out.at(i, j) = lambda * a.at(i, j);
    return out;
}

inline DMat dmat_add(const DMat& a, const DMat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.dim() != b.dim())
        throw std::invalid_argument("DMat shape mismatch in add");
    DMat out(a.rows(), a.cols(), a.dim());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + b.at(i, j);
    return out;
}

/// (A Q)_ij = sum_k a_ik q_kj for a real n x p matrix Q.
inline DMat dmat_matmul(const DMat& a, const Eigen::MatrixXd& q) {
    if (a.cols() != q.rows()) throw std::invalid_argument("DMat shape mismatch in matmul");
    DMat out(a.rows(), q.cols(), a.dim());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(a.dim());
            for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a.at(i, k) * q(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

/// H(A, V)_ij = a_ij . v_i, contracting each row against that row's vector.
inline Eigen::MatrixXd op_H(const DMat& a, const DMat& v) {
    if (v.cols() != 1 || v.rows() != a.rows() || v.dim() != a.dim())
        throw std::invalid_argument("DMat shape mismatch in op_H");
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = a.at(i, j).dot(v.at(i, 0));
    return out;
}

/// Convenience overload with the row vectors stacked as an m x d real matrix.
inline Eigen::MatrixXd op_H(const DMat& a, const Eigen::MatrixXd& v) {
    if (v.rows() != a.rows() || v.cols() != a.dim())
        throw std::invalid_argument("shape mismatch in op_H");
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = a.at(i, j).dot(v.row(i));
    return out;
}

/// d/dv_{i,eta} det(H(A, V)) = det(H(A, V_{i,eta})), where V_{i,eta} replaces
/// v_i by the eta-th canonical basis vector (multilinearity of the determinant
/// in the rows).
inline double det_H_partial(const DMat& a, const Eigen::MatrixXd& v, Eigen::Index i, Eigen::Index eta) {
    if (a.rows() != a.cols()) throw std::invalid_argument("det_H_partial needs a square H");
    if (i < 0 || i >= a.rows() || eta < 0 || eta >= a.dim())
        throw std::out_of_range("det_H_partial index out of range");
    Eigen::MatrixXd vmod = v;
    vmod.row(i).setZero();
    vmod(i, eta) = 1.0;
    return op_H(a, vmod).determinant();
}

}  // namespace nrbf
