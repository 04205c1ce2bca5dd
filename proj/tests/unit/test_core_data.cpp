#include "helpers.hpp"

#include <cmath>
#include <random>

using namespace gensens;
using testutil::error_code_of;
using testutil::from_csv;

TEST(CoreData, MinimalFile) {
    auto d = from_csv("study,treatment,outcome,age\n0,,,3\n1,1,2.5,4\n1,0,1.0,5\n");
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.study_ids().size(), 1u);
    EXPECT_EQ(d.target_rows().size(), 1u);
    EXPECT_EQ(d.study_rows().size(), 2u);
    EXPECT_EQ(d.arm_counts().n_treated, 1u);
    EXPECT_EQ(d.arm_counts().n_control, 1u);
}

TEST(CoreData, EmptyArmNamesStudy) {
    try {
        from_csv("study,treatment,outcome\n0,,\n1,1,1\n1,0,2\n2,1,3\n2,1,4\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Positivity);
        EXPECT_NE(std::string(e.what()).find("study 2"), std::string::npos);
    }
}

TEST(CoreData, TargetRowsMustBeBlank) {
    EXPECT_EQ(error_code_of([] { from_csv("study,treatment,outcome\n0,1,2\n1,1,1\n1,0,2\n"); }),
              ErrorCode::Validation);
}

TEST(CoreData, MissingCovariateRejected) {
    EXPECT_EQ(error_code_of([] { from_csv("study,treatment,outcome,x\n0,,,\n1,1,1,2\n1,0,2,3\n"); }),
              ErrorCode::Validation);
}

TEST(CoreData, ModifierMustBeAdjuster) {
    Schema s;
    s.modifiers = {"x"};
    s.adjusters = {};
    EXPECT_EQ(error_code_of([&] { from_csv("study,treatment,outcome,x\n0,,,1\n1,1,1,2\n1,0,2,3\n", s); }),
              ErrorCode::Validation);
}

TEST(CoreData, UnknownColumn) {
    Schema s;
    s.outcome_column = "y";
    EXPECT_EQ(error_code_of([&] { from_csv("study,treatment,outcome\n0,,\n1,1,1\n1,0,2\n", s); }),
              ErrorCode::Schema);
}

TEST(CoreData, NoTargetOrNoStudy) {
    EXPECT_EQ(error_code_of([] { from_csv("study,treatment,outcome\n1,1,1\n1,0,2\n"); }),
              ErrorCode::Validation);
    EXPECT_EQ(error_code_of([] { from_csv("study,treatment,outcome\n0,,\n"); }), ErrorCode::Validation);
}

TEST(CoreData, CategoricalIndicators) {
    auto d = from_csv("study,treatment,outcome,col\n0,,,a\n0,,,c\n1,1,1,b\n1,0,2,a\n1,1,0,c\n1,0,5,b\n");
    ASSERT_EQ(d.covariate_names(), (std::vector<std::string>{"col=b", "col=c"}));
    const std::vector<std::string> levels = {"a", "c", "b", "a", "c", "b"};
    for (std::size_t i = 0; i < levels.size(); ++i) {
        EXPECT_EQ(d.covariates()(static_cast<Eigen::Index>(i), 0), levels[i] == "b" ? 1.0 : 0.0);
        EXPECT_EQ(d.covariates()(static_cast<Eigen::Index>(i), 1), levels[i] == "c" ? 1.0 : 0.0);
    }
    ASSERT_EQ(d.groups().size(), 1u);
    EXPECT_EQ(d.group("col").columns.size(), 2u);
}

TEST(CoreData, RoundTrip) {
    std::mt19937_64 eng(5);
    std::normal_distribution<double> nd;
    std::vector<UnitRecord> units;
    for (int i = 0; i < 40; ++i) {
        const int s = i % 4;
        if (s == 0)
            units.push_back(testutil::target_unit({{"x1", nd(eng)}, {"x2", nd(eng)}}));
        else
            units.push_back(testutil::study_unit(s, (i / 4) % 2, nd(eng), {{"x1", nd(eng)}, {"x2", nd(eng)}}));
    }
    auto d = PooledDataset::from_units(units, {"x1"}, {"x1", "x2"});
    std::stringstream buf;
    write_csv(buf, d);
    auto e = read_csv(buf, schema_for(d));
    ASSERT_EQ(e.size(), d.size());
    EXPECT_EQ(e.covariate_names(), d.covariate_names());
    EXPECT_EQ(e.modifier_names(), d.modifier_names());
    EXPECT_EQ(e.adjustment_names(), d.adjustment_names());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(e.study_id(i), d.study_id(i));
        if (d.in_studies(i)) {
            EXPECT_EQ(e.treatment(i), d.treatment(i));
            EXPECT_EQ(e.outcome(i), d.outcome(i));
        }
    }
    EXPECT_EQ(e.covariates(), d.covariates());
}

TEST(CoreData, ArmCountsConsistent) {
    std::vector<UnitRecord> units = {testutil::target_unit()};
    for (int s = 1; s <= 3; ++s)
        for (int k = 0; k < s + 2; ++k) units.push_back(testutil::study_unit(s, k % 2, k));
    auto d = PooledDataset::from_units(units, {}, {});
    std::size_t t = 0, c = 0;
    for (const auto& [s, arms] : d.arm_counts().per_study) {
        t += arms.treated;
        c += arms.control;
    }
    EXPECT_EQ(t, d.arm_counts().n_treated);
    EXPECT_EQ(c, d.arm_counts().n_control);
    EXPECT_EQ(d.arm_counts().total(), d.study_rows().size());
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.in_studies(i), d.study_id(i) != 0);
}

TEST(CoreData, SmdIdenticalIsZero) {
    auto d = from_csv("study,treatment,outcome,x\n0,,,1\n0,,,2\n0,,,4\n1,1,0,1\n1,0,0,2\n1,1,0,4\n");
    for (const auto& e : summarize_smd(d)) EXPECT_EQ(e.smd, 0.0);
}

TEST(CoreData, SmdUnitCase) {
    // study mean 1, target mean 0, both sample variances 1
    auto d = from_csv("study,treatment,outcome,x\n0,,,-1\n0,,,0\n0,,,1\n1,1,0,0\n1,0,0,1\n1,1,0,2\n");
    auto t = summarize_smd(d);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_DOUBLE_EQ(t[0].smd, 1.0);
}

TEST(CoreData, SmdSixRows) {
    auto d = from_csv("study,treatment,outcome,x,z\n0,,,0.5,3\n0,,,2.0,1\n1,1,0,1.0,2\n1,0,0,4.0,2\n2,1,0,-1,0\n2,0,0,3,5\n");
    auto smd = [](std::vector<double> s, std::vector<double> t) {
        auto mv = [](const std::vector<double>& v) {
            double m = 0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double ss = 0;
            for (double x : v) ss += (x - m) * (x - m);
            return std::pair{m, ss / static_cast<double>(v.size() - 1)};
        };
        auto [ms, vs] = mv(s);
        auto [mt, vt] = mv(t);
        return (ms - mt) / std::sqrt((vs + vt) / 2);
    };
    auto t = summarize_smd(d);
    ASSERT_EQ(t.size(), 4u);
    EXPECT_NEAR(t[0].smd, smd({1, 4}, {0.5, 2}), 1e-14);
    EXPECT_NEAR(t[1].smd, smd({2, 2}, {3, 1}), 1e-14);
    EXPECT_NEAR(t[2].smd, smd({-1, 3}, {0.5, 2}), 1e-14);
    EXPECT_NEAR(t[3].smd, smd({0, 5}, {3, 1}), 1e-14);
    EXPECT_NEAR(max_abs_smd(t, 2), std::max(std::abs(t[2].smd), std::abs(t[3].smd)), 0);
}

TEST(CoreData, SubsetAndRestrict) {
    auto d = from_csv("study,treatment,outcome\n0,,\n1,1,1\n1,0,2\n2,1,3\n2,0,4\n");
    auto r = d.restrict_to_study(2);
    EXPECT_EQ(r.size(), 3u);
    EXPECT_EQ(r.study_ids(), std::vector<int>{2});
    EXPECT_EQ(error_code_of([&] { d.restrict_to_study(3); }), ErrorCode::Validation);
}

TEST(CoreData, SmdInfiniteWhenBothConstant) {
    auto d = from_csv("study,treatment,outcome,x\n0,,,1\n0,,,1\n1,1,0,2\n1,0,0,2\n");
    EXPECT_TRUE(std::isinf(summarize_smd(d)[0].smd));
}
