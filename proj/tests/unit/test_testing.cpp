#include "helpers.hpp"

#include <algorithm>
#include <random>

using namespace gensens;

namespace {

// Inverse-variance heterogeneity statistic; algebraically equal to the
// contrast-based Wald statistic for independent estimates.
double cochran_q(const std::vector<double>& t, const std::vector<double>& sd) {
    double sw = 0, swt = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        sw += 1 / (sd[i] * sd[i]);
        swt += t[i] / (sd[i] * sd[i]);
    }
    const double m = swt / sw;
    double q = 0;
    for (std::size_t i = 0; i < t.size(); ++i) q += (t[i] - m) * (t[i] - m) / (sd[i] * sd[i]);
    return q;
}

} // namespace

TEST(Testing, ContrastMatrix) {
    Eigen::MatrixXd c2(1, 2);
    c2 << 1, -1;
    EXPECT_EQ(contrast_matrix(2), c2);
    Eigen::MatrixXd c3(2, 3);
    c3 << 1, -1, 0, 1, 0, -1;
    EXPECT_EQ(contrast_matrix(3), c3);
    const auto c4 = contrast_matrix(4);
    EXPECT_EQ(c4.rows(), 3);
    EXPECT_LT(c4.rowwise().sum().cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(Eigen::FullPivLU<Eigen::MatrixXd>(c4).rank(), 3);
    EXPECT_THROW(contrast_matrix(1), Error);
}

TEST(Testing, PublishedThreeStudyExample) {
    const WaldInput in{{-121.76, 57.31, -1218.72}, {368.50, 309.83, 528.77}};
    const auto r = wald_test(in);
    EXPECT_EQ(r.df, 2);
    EXPECT_NEAR(r.statistic, 4.44, 0.02);
    EXPECT_NEAR(r.p_value, 0.109, 0.002);
    EXPECT_NEAR(r.statistic, 4.43950878095043, 1e-10);
    EXPECT_NEAR(r.p_value, 0.1086357875327021, 1e-12);
    EXPECT_NEAR(r.statistic, cochran_q(in.estimates, in.sds), 1e-10);
}

TEST(Testing, EqualEstimates) {
    const auto r = wald_test({{2.0, 2.0, 2.0}, {1.0, 3.0, 0.5}});
    EXPECT_EQ(r.statistic, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
}

TEST(Testing, TwoStudiesClosedForm) {
    const auto r = wald_test({{0.0, 1.0}, {1.0, 1.0}});
    EXPECT_DOUBLE_EQ(r.statistic, 0.5);
    EXPECT_NEAR(r.p_value, std::erfc(std::sqrt(0.25)), 1e-14);
    EXPECT_NEAR(r.p_value, 0.4795, 5e-5);
}

TEST(Testing, ChiSquareTail) {
    EXPECT_EQ(chi2_sf(0.0, 3), 1.0);
    EXPECT_NEAR(chi2_sf(4.439, 2), std::exp(-4.439 / 2), 1e-15);
    EXPECT_NEAR(chi2_sf(4.439, 2), 0.1087, 5e-5);
    EXPECT_NEAR(chi2_sf(0.5, 1), std::erfc(std::sqrt(0.25)), 1e-15);
    for (double x : {0.1, 1.0, 3.7, 12.0, 40.0}) {
        EXPECT_NEAR(chi2_sf(x, 1), std::erfc(std::sqrt(x / 2)), 1e-14 + 1e-12 * chi2_sf(x, 1));
        EXPECT_NEAR(chi2_sf(x, 2), std::exp(-x / 2), 1e-15);
        // df 4: exp(-x/2) (1 + x/2)
        EXPECT_NEAR(chi2_sf(x, 4), std::exp(-x / 2) * (1 + x / 2), 1e-14);
    }
    EXPECT_EQ(chi2_sf(std::numeric_limits<double>::infinity(), 2), 0.0);
    EXPECT_THROW(chi2_sf(-1.0, 2), Error);
    EXPECT_THROW(chi2_sf(1.0, 0), Error);
}

TEST(Testing, PValueDecreasing) {
    for (int df : {1, 2, 5})
        for (double x = 0.0; x < 30.0; x += 0.25) EXPECT_GT(chi2_sf(x, df), chi2_sf(x + 0.25, df));
}

TEST(Testing, PermutationAndScaleInvariance) {
    std::mt19937_64 eng(2);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int rep = 0; rep < 200; ++rep) {
        const int k = 2 + rep % 5;
        WaldInput in;
        for (int i = 0; i < k; ++i) {
            in.estimates.push_back(nd(eng) * 3);
            in.sds.push_back(u(eng));
        }
        const double base = wald_test(in).statistic;
        EXPECT_NEAR(base, cochran_q(in.estimates, in.sds), 1e-10 * std::max(1.0, base));
        std::vector<int> idx(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::shuffle(idx.begin(), idx.end(), eng);
        WaldInput p, scaled;
        const double c = u(eng) * 10;
        for (int i : idx) {
            p.estimates.push_back(in.estimates[static_cast<std::size_t>(i)]);
            p.sds.push_back(in.sds[static_cast<std::size_t>(i)]);
        }
        for (int i = 0; i < k; ++i) {
            scaled.estimates.push_back(c * in.estimates[static_cast<std::size_t>(i)]);
            scaled.sds.push_back(c * in.sds[static_cast<std::size_t>(i)]);
        }
        EXPECT_NEAR(wald_test(p).statistic, base, 1e-10 * std::max(1.0, base));
        EXPECT_NEAR(wald_test(scaled).statistic, base, 1e-10 * std::max(1.0, base));
    }
}

TEST(Testing, SingularCovariance) {
    EXPECT_EQ(testutil::error_code_of([] { wald_test({{1.0, 2.0}, {0.0, 0.0}}); }), ErrorCode::Singular);
    EXPECT_EQ(testutil::error_code_of([] { wald_test({{1.0, 2.0, 3.0}, {0.0, 0.0, 1.0}}); }), ErrorCode::Singular);
    EXPECT_EQ(testutil::error_code_of([] { wald_test({{1.0, 2.0}, {1.0}}); }), ErrorCode::Validation);
    EXPECT_EQ(testutil::error_code_of([] { wald_test({{1.0, 2.0}, {-1.0, 1.0}}); }), ErrorCode::Domain);
}
