#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dnnc/cli.hpp"

using namespace dnnc;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root_ = fs::temp_directory_path() / (std::string("dnnc_cli_") + info->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string path(const std::string& name) const { return (root_ / name).string(); }

    int run(const std::vector<std::string>& args) {
        out_.str("");
        err_.str("");
        return cli::run_cli(args, out_, err_);
    }

    // Synthetic skewed regression data with two features.
    std::string write_dataset(int n = 150) {
        Rng rng = make_rng(42);
        std::ostringstream os;
        os << "x1,x2,y\n";
        for (int i = 0; i < n; ++i) {
            const double x1 = uniform01(rng), x2 = uniform01(rng);
            const double y = std::exp(0.8 * x1 + 0.3 * std_normal(rng)) + x2;
            os << format_double(x1) << ',' << format_double(x2) << ',' << format_double(y) << '\n';
        }
        write_text(path("data.csv"), os.str());
        return path("data.csv");
    }

    std::string write_config(const nlohmann::json& j, const std::string& name = "config.json") {
        write_json(path(name), j);
        return path(name);
    }

    static std::map<std::string, std::string> snapshot(const fs::path& dir) {
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_text(e.path());
        return files;
    }

    fs::path root_;
    std::ostringstream out_, err_;
};

const nlohmann::json kSmallRegression{{"network", {{"hidden", {8}}, {"dropout", 0.0}}},
                                      {"train", {{"epochs", 30}, {"learning_rate", 0.01}}},
                                      {"mcmc", {{"burnin", 100}, {"draws", 100}}}};

const nlohmann::json kSmallLfi{{"lfi",
                                {{"cnn", {{"kernel1", 5}, {"kernel2", 3}, {"filters1", 3}, {"filters2", 2},
                                          {"dense_width", 4}}},
                                 {"train", {{"epochs", 3}}},
                                 {"mcmc", {{"burnin", 20}, {"draws", 20}}},
                                 {"params", {0, 4}},
                                 {"replicates", 20},
                                 {"split_kernel2", 3}}}};

}  // namespace

TEST_F(CliTest, VersionAndHelp) {
    EXPECT_EQ(run({"--version"}), 0);
    EXPECT_EQ(out_.str(), std::string(cli::kVersion) + "\n");
    EXPECT_EQ(run({"--help"}), 0);
    EXPECT_NE(out_.str().find("lfi-simulate"), std::string::npos);
}

TEST_F(CliTest, ConfigurationErrorsExitWithTwo) {
    EXPECT_EQ(run({}), cli::kConfigError);
    EXPECT_EQ(run({"train"}), cli::kConfigError);
    EXPECT_EQ(run({"fit", "--out", path("o")}), cli::kConfigError);  // no seed
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o")}), cli::kConfigError);  // no data
    EXPECT_NE(err_.str().find("--data"), std::string::npos);
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", write_dataset(), "--method", "gbm"}),
              cli::kConfigError);
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", path("data.csv"), "--variant", "lasso"}),
              cli::kConfigError);
    EXPECT_EQ(run({"lfi-simulate", "--seed", "1", "--out", path("o"), "--model", "lynx"}), cli::kConfigError);
    write_text(path("bad.json"), "{\"network\": {\"hidden\": \"wide\"}}");
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", path("data.csv"), "--config", path("bad.json")}),
              cli::kConfigError);
}

TEST_F(CliTest, DataErrorsExitWithThree) {
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", path("missing.csv")}), cli::kDataError);
    write_text(path("ragged.csv"), "a,b\n1,2\n3\n");
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", path("ragged.csv")}), cli::kDataError);
    write_text(path("const.csv"), "a,y\n1,2\n2,2\n3,2\n4,2\n5,2\n6,2\n");
    EXPECT_EQ(run({"fit", "--seed", "1", "--out", path("o"), "--data", path("const.csv")}), cli::kDataError);
    EXPECT_EQ(run({"predict", "--seed", "1", "--out", path("o"), "--bundle", path("nowhere"), "--data",
                   path("const.csv")}),
              cli::kDataError);
}

TEST_F(CliTest, FitPredictCalibrateFlow) {
    const auto data = write_dataset();
    const auto cfg = write_config(kSmallRegression);
    ASSERT_EQ(run({"fit", "--seed", "7", "--out", path("bundle"), "--data", data, "--config", cfg}), 0) << err_.str();
    const auto manifest = read_json(path("bundle/manifest.json"));
    EXPECT_EQ(manifest.at("command"), "fit");
    EXPECT_EQ(manifest.at("seed"), 7);
    EXPECT_TRUE(manifest.at("outputs").contains("margin.json"));
    EXPECT_TRUE(manifest.at("outputs").contains("draws.csv"));
    EXPECT_EQ(manifest.at("inputs").at("data").at("hash"), hex64(fnv1a(read_text(data))));

    ASSERT_EQ(run({"predict", "--seed", "7", "--out", path("pred"), "--bundle", path("bundle"), "--data", data}), 0)
        << err_.str();
    const auto preds = read_csv(fs::path(path("pred/predictions.csv")));
    EXPECT_EQ(preds.rows.size(), 150u);
    EXPECT_EQ(preds.header, (std::vector<std::string>{"index", "f", "s", "mean", "q025", "q50", "q975"}));
    for (std::size_t i = 0; i < preds.rows.size(); ++i) {
        EXPECT_LT(preds.rows[i][4], preds.rows[i][5]);
        EXPECT_LT(preds.rows[i][5], preds.rows[i][6]);
    }
    const auto curve = read_csv(fs::path(path("pred/densities/obs_00001.csv")));
    EXPECT_NEAR(trapezoid(curve.column(0), curve.column(1)), 1.0, 1e-3);

    ASSERT_EQ(run({"calibrate", "--seed", "7", "--out", path("cal"), "--bundle", path("bundle"), "--data", data,
                   "--folds", "0"}),
              0)
        << err_.str();
    const auto summary = read_json(path("cal/summary.json"));
    EXPECT_LT(summary.at("marginal_sup_distance").get<double>(), 0.05);
    EXPECT_TRUE(summary.at("in_sample_mls").is_number());
    EXPECT_FALSE(summary.contains("kfold_mls"));
    EXPECT_TRUE(fs::exists(path("cal/probability_calibration.csv")));
    EXPECT_TRUE(fs::exists(path("cal/marginal_calibration.csv")));
}

TEST_F(CliTest, KfoldAndBaselineCalibration) {
    const auto data = write_dataset(100);
    const auto cfg = write_config(kSmallRegression);
    ASSERT_EQ(run({"fit", "--seed", "3", "--out", path("dnn"), "--data", data, "--config", cfg, "--method", "dnn"}), 0)
        << err_.str();
    ASSERT_EQ(run({"calibrate", "--seed", "3", "--out", path("cal"), "--bundle", path("dnn"), "--data", data,
                   "--folds", "3"}),
              0)
        << err_.str();
    const auto s = read_json(path("cal/summary.json"));
    EXPECT_EQ(s.at("method"), "dnn");
    EXPECT_EQ(s.at("kfold_fold_means").size(), 3u);
    EXPECT_TRUE(s.contains("recalibrated_probability_max_deviation"));
    EXPECT_LE(s.at("recalibrated_probability_max_deviation").get<double>(),
              s.at("probability_max_deviation").get<double>());
    EXPECT_TRUE(fs::exists(path("cal/probability_calibration_recalibrated.csv")));
}

TEST_F(CliTest, TamperedBundleIsRejected) {
    const auto data = write_dataset(80);
    const auto cfg = write_config(kSmallRegression);
    ASSERT_EQ(run({"fit", "--seed", "5", "--out", path("b"), "--data", data, "--config", cfg}), 0) << err_.str();
    auto m = read_json(path("b/margin.json"));
    m["sample"][0] = m["sample"][0].get<double>() + 1.0;
    write_json(path("b/margin.json"), m);
    EXPECT_EQ(run({"predict", "--seed", "5", "--out", path("p"), "--bundle", path("b"), "--data", data}),
              cli::kDataError);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
    const auto data = write_dataset(80);
    const auto cfg = write_config(kSmallRegression);
    ASSERT_EQ(run({"fit", "--seed", "9", "--out", path("a"), "--data", data, "--config", cfg}), 0) << err_.str();
    ASSERT_EQ(run({"fit", "--seed", "9", "--out", path("b"), "--data", data, "--config", cfg}), 0) << err_.str();
    EXPECT_EQ(snapshot(path("a")), snapshot(path("b")));
    ASSERT_EQ(run({"fit", "--seed", "10", "--out", path("c"), "--data", data, "--config", cfg}), 0) << err_.str();
    EXPECT_NE(snapshot(path("a")).at("draws.csv"), snapshot(path("c")).at("draws.csv"));
}

TEST_F(CliTest, LfiSimulateFitScore) {
    const auto cfg = write_config(kSmallLfi);
    ASSERT_EQ(run({"lfi-simulate", "--seed", "1", "--out", path("sim"), "--model", "blowfly", "--n", "60", "--length",
                   "30", "--config", cfg}),
              0)
        << err_.str();
    const auto info = read_json(path("sim/simulate.json"));
    EXPECT_EQ(info.at("n_train"), 48);
    EXPECT_EQ(info.at("n_test"), 12);
    EXPECT_EQ(info.at("T"), 30);
    const auto train = read_csv(fs::path(path("sim/train.csv")));
    EXPECT_EQ(train.cols(), 36u);

    // Observed series for the composite scores.
    Rng rng = make_rng(2);
    const auto obs = lfi::simulate_blowfly(lfi::BlowflyParams{}, 30, rng);
    std::ostringstream os;
    os << "d\n";
    for (auto v : obs) os << v << '\n';
    write_text(path("obs.csv"), os.str());

    ASSERT_EQ(run({"lfi-fit", "--seed", "1", "--out", path("fits"), "--model", "blowfly", "--train",
                   path("sim/train.csv"), "--config", cfg}),
              0)
        << err_.str();
    const auto fits = read_json(path("fits/fits.json"));
    ASSERT_EQ(fits.at("fits").size(), 2u);
    EXPECT_EQ(fits.at("fits")[1].at("parameter"), "tau");
    EXPECT_TRUE(fs::exists(path("fits/split/tau/network.json")));

    ASSERT_EQ(run({"lfi-score", "--seed", "1", "--out", path("score"), "--model", "blowfly", "--fits", path("fits"),
                   "--test", path("sim/test.csv"), "--observed", path("obs.csv"), "--config", cfg}),
              0)
        << err_.str();
    const auto sim = read_json(path("score/simulation.json"));
    ASSERT_EQ(sim.at("rows").size(), 2u);
    const double cov = sim.at("rows")[0].at("coverage");
    EXPECT_GE(cov, 0.0);
    EXPECT_LE(cov, 1.0);
    const auto comp = read_json(path("score/composite.json"));
    EXPECT_EQ(comp.at("K"), 24);
    EXPECT_EQ(comp.at("estimates").size(), 2u);
    EXPECT_TRUE(comp.at("cls").is_number());

    // Wrong model for the stored fits.
    EXPECT_EQ(run({"lfi-score", "--seed", "1", "--out", path("score2"), "--model", "voles", "--fits", path("fits"),
                   "--test", path("sim/test.csv")}),
              cli::kDataError);
}

TEST_F(CliTest, LfiSimulateIsDeterministic) {
    for (const char* dir : {"a", "b"})
        ASSERT_EQ(run({"lfi-simulate", "--seed", "4", "--out", path(dir), "--model", "voles", "--n", "10", "--length",
                       "12", "--priors", std::string(DNNC_DATA_DIR) + "/priors/voles.json"}),
                  0)
            << err_.str();
    EXPECT_EQ(snapshot(path("a")), snapshot(path("b")));
}
