#include "nrbf/optdir.hpp"

#include "nrbf/experiments.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <random>

using namespace nrbf;
using Catch::Approx;

namespace {

Vector v2(double x, double y) { return Eigen::Vector2d(x, y); }

NodeSet two_node_set() {
    NodeSet ns;
    ns.spacing = 1.0;
    ns.positions.resize(2, 2);
    ns.positions << 0, 0, 1, 0;
    ns.normals = Matrix::Zero(2, 2);
    ns.normals.row(1) << 1, 0;
    ns.kinds = {NodeKind::Interior, NodeKind::Boundary};
    return ns;
}

Stencil full_stencil(const NodeSet& ns) {
    Stencil st;
    st.center = 0;
    for (Index i = 0; i < ns.size(); ++i)
        (ns.is_boundary(i) ? st.boundary : st.interior).push_back(i);
    return st;
}

NodeSet random_set(std::mt19937_64& rng, Index m_i, Index m_b, double min_sep = 0.4) {
    std::uniform_real_distribution<double> pos(-2.5, 2.5);
    std::normal_distribution<double> nrm;
    NodeSet ns;
    ns.spacing = 1.0;
    for (;;) {
        ns.positions.resize(m_i + m_b, 2);
        for (Index i = 0; i < m_i + m_b; ++i) ns.positions.row(i) << pos(rng), pos(rng);
        double min_d = 1e30;
        for (Index i = 0; i < ns.positions.rows(); ++i)
            for (Index j = i + 1; j < ns.positions.rows(); ++j)
                min_d = std::min(min_d, (ns.positions.row(i) - ns.positions.row(j)).norm());
        if (min_d > min_sep) break;
    }
    ns.normals = Matrix::Zero(m_i + m_b, 2);
    ns.kinds.assign(static_cast<std::size_t>(m_i + m_b), NodeKind::Interior);
    for (Index b = m_i; b < m_i + m_b; ++b) {
        ns.kinds[static_cast<std::size_t>(b)] = NodeKind::Boundary;
        Eigen::Vector2d n(nrm(rng), nrm(rng));
        ns.normals.row(b) = n.normalized();
    }
    return ns;
}

DMat random_gbb(std::mt19937_64& rng, Index m_b) {
    std::normal_distribution<double> dist;
    DMat g(m_b, m_b, 2);
    for (Index i = 0; i < m_b; ++i)
        for (Index j = 0; j < m_b; ++j) g.at(i, j) = v2(dist(rng), dist(rng));
    return g;
}

double det_of_assembled(const NodeSet& ns, const Stencil& st, const KernelSpec& k) {
    return assemble(st, ns, k, PolyBasis::none(2)).M.partialPivLu().determinant();
}

}  // namespace

TEST_CASE("schur data of the two-node example") {
    const NodeSet ns = two_node_set();
    const SchurData data = schur_data(full_stencil(ns), ns, KernelSpec::mq(1.0));
    CHECK(data.psi_bar(0, 0) == Approx(std::sqrt(2.0)));
    CHECK(data.d_bi.at(0, 0)[0] == Approx(1.0 / std::sqrt(2.0)));
    CHECK(data.d_bi.at(0, 0)[1] == 0.0);
    CHECK(data.g_bb.at(0, 0)[0] == Approx(-1.0));
    CHECK(data.g_bb.at(0, 0)[1] == Approx(0.0).margin(1e-15));

    const Matrix s = s_bb(data, data.boundary_normals);
    CHECK(s(0, 0) == Approx(-1.0));
    CHECK(det_of_assembled(ns, full_stencil(ns), KernelSpec::mq(1.0)) == Approx(-1.0));
}

TEST_CASE("D_BB is antisymmetric with a zero diagonal") {
    std::mt19937_64 rng(2024);
    const NodeSet ns = random_set(rng, 6, 4);
    const SchurData data = schur_data(full_stencil(ns), ns, KernelSpec::mq(0.5));
    for (Index a = 0; a < 4; ++a) {
        CHECK(data.d_bb.at(a, a).norm() == 0.0);
        for (Index b = 0; b < 4; ++b)
            CHECK((data.d_bb.at(a, b) + data.d_bb.at(b, a)).norm() < 1e-15);
    }
}

TEST_CASE("kernels of conditional order above one are rejected") {
    const NodeSet ns = two_node_set();
    CHECK_THROWS_AS(schur_data(full_stencil(ns), ns, KernelSpec::phs(3)), SchurError);
    CHECK_THROWS_AS(schur_data(full_stencil(ns), ns, KernelSpec::tps(1)), SchurError);
}

TEST_CASE("mirror-symmetric geometry yields mirror-symmetric couplings") {
    NodeSet ns;
    ns.spacing = 1.0;
    ns.positions.resize(5, 2);
    ns.positions << 0, 1, -1, 1, 1, 1, -0.5, 0, 0.5, 0;
    ns.normals = Matrix::Zero(5, 2);
    ns.normals.row(3) << 0, -1;
    ns.normals.row(4) << 0, -1;
    ns.kinds.assign(5, NodeKind::Interior);
    ns.kinds[3] = ns.kinds[4] = NodeKind::Boundary;
    const SchurData data = schur_data(full_stencil(ns), ns, KernelSpec::mq(0.7));
    // g_01 is the x-mirror of g_10
    CHECK(data.g_bb.at(0, 1)[0] == Approx(-data.g_bb.at(1, 0)[0]).margin(1e-13));
    CHECK(data.g_bb.at(0, 1)[1] == Approx(data.g_bb.at(1, 0)[1]).margin(1e-13));
}

TEST_CASE("block determinant identity on random stencils") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> mi(4, 20), mb(1, 5);
    const KernelSpec kernel = KernelSpec::mq(0.5);
    for (int t = 0; t < 100; ++t) {
        const NodeSet ns = random_set(rng, mi(rng), mb(rng));
        const Stencil st = full_stencil(ns);
        std::optional<SchurData> data;
        try {
            data.emplace(schur_data(st, ns, kernel));
        } catch (const SchurError&) {
            continue;
        }
        Matrix phi_ii(st.m_I(), st.m_I());
        for (Index i = 0; i < st.m_I(); ++i)
            for (Index j = 0; j < st.m_I(); ++j)
                phi_ii(i, j) = phi(kernel, (ns.positions.row(i) - ns.positions.row(j)).norm());
        const double det_m = det_of_assembled(ns, st, kernel);
        const double factored = phi_ii.partialPivLu().determinant() *
                                s_bb(*data, data->boundary_normals).determinant();
        CHECK(std::abs(det_m - factored) <= 1e-8 * std::abs(det_m));
    }
}

TEST_CASE("normal reversal flips the corresponding row of S_BB") {
    std::mt19937_64 rng(7);
    const NodeSet ns = random_set(rng, 8, 3);
    const SchurData data = schur_data(full_stencil(ns), ns, KernelSpec::mq(0.5));
    Matrix flipped = data.boundary_normals;
    flipped.row(1) *= -1.0;
    const Matrix s0 = s_bb(data, data.boundary_normals);
    const Matrix s1 = s_bb(data, flipped);
    CHECK((s0.row(1) + s1.row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s0.row(0) - s1.row(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s0.row(2) - s1.row(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-node dot-product law against direct determinants") {
    std::mt19937_64 rng(123);
    std::uniform_int_distribution<int> mi(4, 20);
    std::normal_distribution<double> nd;
    const KernelSpec kernel = KernelSpec::mq(0.5);
    for (int t = 0; t < 100; ++t) {
        NodeSet ns = random_set(rng, mi(rng), 1);
        const Stencil st = full_stencil(ns);
        SingleNodeV v;
        try {
            v = single_node_v(schur_data(st, ns, kernel));
        } catch (const SchurError&) {
            continue;
        }
        if (v.singular) continue;
        const Vector vhat = v.v / v.v.norm();
        ns.normals.row(ns.size() - 1) = vhat;
        const double det_at_v = det_of_assembled(ns, st, kernel);
        CHECK(det_at_v > 0.0);  // the sign convention of v
        for (int probe = 0; probe < 8; ++probe) {
            Eigen::Vector2d n(nd(rng), nd(rng));
            n.normalize();
            ns.normals.row(ns.size() - 1) = n;
            const double det_n = det_of_assembled(ns, st, kernel);
            CHECK(det_n / det_at_v == Approx(v.v.dot(n) / v.v.norm()).margin(1e-8));
        }
    }
}

TEST_CASE("v is vertical for a symmetric one-sided stencil") {
    auto [nodes, st] = reference_stencil(0.0, 1.0);
    Stencil single = st;
    single.boundary = {st.boundary[3]};  // the central wall node at x = 0
    const SingleNodeV v = single_node_v(schur_data(single, nodes, KernelSpec::mq(0.5)));
    CHECK(std::abs(v.v[0]) < 1e-12 * std::abs(v.v[1]));
    CHECK(v.w.size() == 15);
}

TEST_CASE("a normal orthogonal to v makes the matrix singular") {
    std::mt19937_64 rng(31);
    NodeSet ns = random_set(rng, 10, 1);
    const Stencil st = full_stencil(ns);
    const SingleNodeV v = single_node_v(schur_data(st, ns, KernelSpec::mq(0.5)));
    REQUIRE_FALSE(v.singular);
    const Eigen::Vector2d perp = Eigen::Vector2d(-v.v[1], v.v[0]).normalized();
    ns.normals.row(ns.size() - 1) = perp;
    const StencilSystem sys = assemble(st, ns, KernelSpec::mq(0.5), PolyBasis::none(2));
    const double det = sys.M.partialPivLu().determinant();
    CHECK(std::abs(det) <= 1e-10 * sys.M.cwiseAbs().maxCoeff() * sys.M.rows());
}

TEST_CASE("determinant is linear in each normal (dot-product form)") {
    std::mt19937_64 rng(17);
    NodeSet ns = random_set(rng, 8, 3);
    const Stencil st = full_stencil(ns);
    std::normal_distribution<double> nd;
    for (Index b = 8; b < 11; ++b) {
        // three collinearity probes: det(M(a n1 + b n2)) = a det(M(n1)) + b det(M(n2))
        const Eigen::Vector2d n1 = Eigen::Vector2d(nd(rng), nd(rng)).normalized();
        const Eigen::Vector2d n2 = Eigen::Vector2d(nd(rng), nd(rng)).normalized();
        const Eigen::RowVector2d saved = ns.normals.row(b);
        ns.normals.row(b) = n1;
        const double d1 = det_of_assembled(ns, st, KernelSpec::mq(0.5));
        ns.normals.row(b) = n2;
        const double d2 = det_of_assembled(ns, st, KernelSpec::mq(0.5));
        const double a = 0.3, c = -1.7;
        ns.normals.row(b) = a * n1 + c * n2;
        const double d3 = det_of_assembled(ns, st, KernelSpec::mq(0.5));
        CHECK(d3 == Approx(a * d1 + c * d2).margin(1e-10 * (std::abs(d1) + std::abs(d2))));
        ns.normals.row(b) = saved;
    }
}

TEST_CASE("optimal directions: single boundary node converges in one sweep") {
    std::mt19937_64 rng(57);
    const NodeSet ns = random_set(rng, 9, 1);
    const SchurData data = schur_data(full_stencil(ns), ns, KernelSpec::mq(0.5));
    const OptResult res = optimal_directions(data);
    const SingleNodeV v = single_node_v(data);
    CHECK(res.converged);
    const double align = std::abs(res.directions.row(0).dot(v.v.normalized()));
    CHECK(align == Approx(1.0).epsilon(1e-10));
}

TEST_CASE("optimal direction of the central reference node is vertical") {
    auto [nodes, st] = reference_stencil(0.0, 1.0);
    const SchurData data = schur_data(st, nodes, KernelSpec::mq(0.5));
    const OptResult res = optimal_directions(data);
    REQUIRE(res.converged);
    CHECK(std::abs(res.directions(3, 0)) < 1e-9);
    CHECK(std::abs(res.directions(3, 1)) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stationarity at convergence for random couplings") {
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> mb(1, 5);
    for (int t = 0; t < 50; ++t) {
        const DMat g = random_gbb(rng, mb(rng));
        Matrix init(g.rows(), 2);
        for (Index i = 0; i < g.rows(); ++i) {
            Vector n0 = g.at(i, i);
            if (!(n0.norm() > 0)) n0 = v2(1, 0);
            init.row(i) = n0.normalized();
        }
        const OptResult res = optimal_directions(g, init);
        REQUIRE(res.converged);
        CHECK(res.residual <= 1e-10);

        // tangential finite-difference derivative of det S_BB vanishes
        for (Index i = 0; i < g.rows(); ++i) {
            const double h = 1e-6;
            Matrix np = res.directions, nm = res.directions;
            const Eigen::Vector2d n = res.directions.row(i);
            const Eigen::Vector2d t_perp(-n.y(), n.x());
            np.row(i) = (n + h * t_perp).normalized();
            nm.row(i) = (n - h * t_perp).normalized();
            const double fd = (op_H(g, np).determinant() - op_H(g, nm).determinant()) / (2.0 * h);
            CHECK(std::abs(fd) < 1e-6 * std::max(1.0, std::abs(res.det_value)));
        }

        // flipping one direction flips the sign of det S_BB; flipping two restores it
        Matrix flip1 = res.directions;
        flip1.row(0) *= -1.0;
        CHECK(op_H(g, flip1).determinant() == Approx(-res.det_value).margin(1e-12));
        if (g.rows() > 1) {
            flip1.row(1) *= -1.0;
            CHECK(op_H(g, flip1).determinant() == Approx(res.det_value).margin(1e-12));
        }
    }
}

TEST_CASE("two-node closed form against the iterative solver and a grid oracle") {
    // fixed matrices with brute-force grid verification at 0.25 degrees
    auto grid_best = [](const Matrix& G) {
        double best = -1e30;
        const int n = 1440;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double a = 2.0 * M_PI * i / n, b = 2.0 * M_PI * j / n;
                const double val = Eigen::Vector2d(std::cos(a), std::sin(a))
                                       .dot(G * Eigen::Vector2d(std::cos(b), std::sin(b)));
                best = std::max(best, val);
            }
        return best;
    };
    {
        Matrix G = Matrix::Identity(2, 2);
        const TwoNodeSolution sol = two_node_closed_form(G);
        CHECK(sol.det_value == Approx(1.0));
        CHECK(std::abs(sol.n1.dot(sol.n2)) == Approx(1.0));
    }
    {
        Matrix G(2, 2);
        G << 2, 0, 0, 1;
        const TwoNodeSolution sol = two_node_closed_form(G);
        CHECK(sol.det_value == Approx(2.0));
        CHECK(std::abs(sol.n1[0]) == Approx(1.0));
        CHECK(std::abs(sol.n2[0]) == Approx(1.0));
        CHECK(grid_best(G) == Approx(2.0).epsilon(1e-5));
    }
    {
        Matrix G(2, 2);
        G << 1, 0, 0, 0;
        const TwoNodeSolution sol = two_node_closed_form(G);
        CHECK(sol.det_value == Approx(1.0));
        CHECK(std::abs(sol.n1[0]) == Approx(1.0));
        CHECK(grid_best(G) == Approx(1.0).epsilon(1e-5));
    }

    // random couplings: iterative result matches eigen solution and sqrt(lambda_max)
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        const DMat g = random_gbb(rng, 2);
        const Matrix G = two_node_coupling(g);
        const TwoNodeSolution sol = two_node_closed_form(G);
        Matrix init(2, 2);
        init.row(0) = g.at(0, 0).normalized();
        init.row(1) = g.at(1, 1).normalized();
        const OptResult res = optimal_directions(g, init, 1e-14, 5000);
        REQUIRE(res.converged);
        const double gap1 = std::acos(std::min(1.0, std::abs(res.directions.row(0).dot(sol.n1))));
        const double gap2 = std::acos(std::min(1.0, std::abs(res.directions.row(1).dot(sol.n2))));
        CHECK(gap1 < 1e-5);
        CHECK(gap2 < 1e-5);
        CHECK(std::abs(res.det_value) == Approx(sol.det_value).epsilon(1e-8));
    }
}

TEST_CASE("the symmetric three-node configuration has two extremum classes") {
    const ThreeNodeReport rep = symmetric_three_node_case();
    CHECK(rep.det_000 == -1.0);
    CHECK(rep.det_all_half_pi == Approx(-1.0).margin(1e-15));
    CHECK(rep.det_mixed == Approx(0.0).margin(1e-15));
    CHECK(rep.converged_cos_class);
    CHECK(rep.converged_sin_class);
    CHECK(rep.classes_distinct);
}

TEST_CASE("singular locations stay near the interior cluster") {
    // zero set of ||v|| over a position grid for the three-node hexagonal
    // arrangement: any sign-change cell lies inside the inflated convex hull
    const double s = 1.0;
    const Matrix interior = hex_arrangement(3, s);
    const KernelSpec kernel = KernelSpec::mq(0.5);
    const Eigen::Vector2d lo = interior.colwise().minCoeff().array() - 3.0 * s;
    const Eigen::Vector2d hi = interior.colwise().maxCoeff().array() + 3.0 * s;
    const Eigen::Vector2d centroid = interior.colwise().mean();
    double hull_radius = 0.0;
    for (Index i = 0; i < interior.rows(); ++i)
        hull_radius = std::max(hull_radius, (Eigen::Vector2d(interior.row(i)) - centroid).norm());

    const int n = 48;
    Matrix vx(n, n), vy(n, n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            const Eigen::Vector2d p(lo.x() + (hi.x() - lo.x()) * ix / (n - 1),
                                    lo.y() + (hi.y() - lo.y()) * iy / (n - 1));
            try {
                const SingleNodeV v = probe_single_node_v(interior, p, kernel, s);
                vx(iy, ix) = v.v[0];
                vy(iy, ix) = v.v[1];
            } catch (const std::exception&) {
                vx(iy, ix) = vy(iy, ix) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    int zero_cells = 0;
    for (int iy = 0; iy + 1 < n; ++iy)
        for (int ix = 0; ix + 1 < n; ++ix) {
            const double x0 = vx(iy, ix), x1 = vx(iy, ix + 1), x2 = vx(iy + 1, ix), x3 = vx(iy + 1, ix + 1);
            const double y0 = vy(iy, ix), y1 = vy(iy, ix + 1), y2 = vy(iy + 1, ix), y3 = vy(iy + 1, ix + 1);
            if (std::isnan(x0) || std::isnan(x1) || std::isnan(x2) || std::isnan(x3)) continue;
            const bool sign_x = std::min({x0, x1, x2, x3}) < 0.0 && std::max({x0, x1, x2, x3}) > 0.0;
            const bool sign_y = std::min({y0, y1, y2, y3}) < 0.0 && std::max({y0, y1, y2, y3}) > 0.0;
            if (sign_x && sign_y) {
                ++zero_cells;
                const Eigen::Vector2d cell(lo.x() + (hi.x() - lo.x()) * (ix + 0.5) / (n - 1),
                                           lo.y() + (hi.y() - lo.y()) * (iy + 0.5) / (n - 1));
                CHECK((cell - centroid).norm() <= hull_radius + 1.5 * s);
            }
        }
    CHECK(zero_cells > 0);

    // far-field positions keep a healthy optimal vector
    for (int i = 0; i < 16; ++i) {
        const double theta = 2.0 * M_PI * i / 16;
        const Eigen::Vector2d p = centroid + (hull_radius + 4.0 * s) * Eigen::Vector2d(std::cos(theta), std::sin(theta));
        const SingleNodeV v = probe_single_node_v(interior, p, kernel, s);
        CHECK_FALSE(v.singular);
    }
}

TEST_CASE("polynomial influence: decay, determinant identity and direction shift") {
    auto [nodes, st] = reference_stencil(0.2, 1.0);
    const PolyBasis basis(2, 2);

    double prev = std::numeric_limits<double>::infinity();
    for (const double eps_s : {0.6, 0.4, 0.3, 0.2}) {
        const PolyInfluence inf = poly_delta_w(st, nodes, KernelSpec::mq(eps_s), basis);
        const double norm = inf.delta_w.norm();
        CHECK(norm < prev);
        prev = norm;
    }

    const KernelSpec kernel = KernelSpec::mq(0.5);
    const PolyInfluence inf = poly_delta_w(st, nodes, kernel, basis);
    const double det_m = assemble(st, nodes, kernel, basis).M.partialPivLu().determinant();
    const double factored = inf.det_m_ii * inf.s_bb_aug.partialPivLu().determinant();
    CHECK(std::abs(det_m - factored) <= 1e-8 * std::abs(det_m));

    CHECK(inf.max_angle_shift * 180.0 / M_PI < 5.0);

    // W_BB = d(phi_BB) - S_BB_aug equals the bare term minus Delta W
    const SchurData data = schur_data(st, nodes, kernel);
    const Matrix bare = s_bb(data, data.boundary_normals);
    CHECK((inf.s_bb_aug - (bare + inf.delta_w)).cwiseAbs().maxCoeff() <=
          1e-10 * bare.cwiseAbs().maxCoeff());
}

TEST_CASE("augmentation needs a unisolvent interior stencil") {
    // collinear interior nodes cannot support a full quadratic basis
    NodeSet ns;
    ns.spacing = 1.0;
    ns.positions.resize(7, 2);
    for (Index i = 0; i < 6; ++i) ns.positions.row(i) << static_cast<double>(i), 0.0;
    ns.positions.row(6) << 2.5, -1.0;
    ns.normals = Matrix::Zero(7, 2);
    ns.normals.row(6) << 0, -1;
    ns.kinds.assign(7, NodeKind::Interior);
    ns.kinds[6] = NodeKind::Boundary;
    CHECK_THROWS_AS(poly_delta_w(full_stencil(ns), ns, KernelSpec::mq(0.5), PolyBasis(2, 2)),
                    SchurError);
}
