#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "xcanids/container.hpp"
#include "xcanids/error.hpp"
#include "xcanids/model.hpp"
#include "xcanids/pipeline.hpp"

using namespace xcanids;

namespace {

FeatureWindow window_from(const std::vector<float>& data, unsigned w, unsigned x) {
    FeatureWindow win;
    win.w = w;
    win.x = x;
    win.data = data;
    return win;
}

// Smooth low-dimensional structure an autoencoder can actually learn.
std::vector<FeatureWindow> wave_windows(int count, unsigned w, unsigned x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 6.28318);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::vector<FeatureWindow> out;
    for (int n = 0; n < count; ++n) {
        double p = phase(rng);
        std::vector<float> data;
        data.reserve(static_cast<std::size_t>(w) * x);
        for (unsigned t = 0; t < w; ++t)
            for (unsigned i = 0; i < x; ++i) {
                double v = 0.5 + 0.4 * std::sin(p + 0.3 * t + 0.9 * i) + noise(rng);
                data.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
        out.push_back(window_from(data, w, x));
    }
    return out;
}

std::vector<FeatureWindow> random_windows(int count, unsigned w, unsigned x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<FeatureWindow> out;
    for (int n = 0; n < count; ++n) {
        std::vector<float> data(static_cast<std::size_t>(w) * x);
        for (auto& v : data) v = static_cast<float>(u(rng));
        out.push_back(window_from(data, w, x));
    }
    return out;
}

ModelConfig small_config(ModelFamily family) {
    ModelConfig cfg;
    cfg.family = family;
    cfg.encoder_widths = {8};
    cfg.latent = 4;
    cfg.decoder_widths = {8};
    cfg.window = 4;
    cfg.signals = 3;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("signalwise losses average to the global reconstruction error", "[model]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < 1000; ++n) {
        int w = 1 + static_cast<int>(rng() % 12);
        int x = 1 + static_cast<int>(rng() % 9);
        std::vector<float> S(static_cast<std::size_t>(w) * x);
        std::vector<double> R(S.size());
        for (auto& v : S) v = static_cast<float>(u(rng));
        for (auto& v : R) v = u(rng);
        std::vector<double> l = signalwise_loss(S, R, w, x);
        double mean = 0;
        for (double v : l) mean += v;
        mean /= static_cast<double>(l.size());
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(global_mse(S, R), 1e-12));
    }
}

TEST_CASE("loss helpers reject mismatched shapes", "[model]") {
    std::vector<float> S(6, 0.5f);
    std::vector<double> R(5, 0.5);
    CHECK_THROWS_AS(global_mse(S, R), DataError);
    CHECK_THROWS_AS(signalwise_loss(S, std::vector<double>(6, 0.5), 2, 2), DataError);
}

TEST_CASE("analytic gradients match finite differences", "[model]") {
    auto batch = random_windows(4, 4, 3, 19);
    SECTION("dense") {
        Autoencoder model(small_config(ModelFamily::dense));
        auto r = gradient_check(model, batch, 200, 1e-6, 5);
        CHECK(r.samples == 200);
        CHECK(r.max_rel_err < 1e-4);
    }
    SECTION("lstm") {
        ModelConfig cfg = small_config(ModelFamily::lstm);
        cfg.encoder_widths = {6};
        cfg.decoder_widths = {6};
        Autoencoder model(cfg);
        auto r = gradient_check(model, batch, 200, 1e-6, 5);
        CHECK(r.max_rel_err < 1e-3);
    }
    SECTION("bilstm") {
        ModelConfig cfg = small_config(ModelFamily::bilstm);
        cfg.encoder_widths = {6};
        cfg.decoder_widths = {6};
        Autoencoder model(cfg);
        auto r = gradient_check(model, batch, 200, 1e-6, 5);
        CHECK(r.max_rel_err < 1e-3);
    }
}

TEST_CASE("initialization is deterministic in the seed", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::dense);
    Autoencoder a(cfg), b(cfg);
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

    cfg.seed = 8;
    Autoencoder c(cfg);
    bool any_diff = false;
    auto pc = c.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->value != pc[i]->value) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("lstm forget gates start open", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::lstm);
    cfg.encoder_widths = {6};
    cfg.decoder_widths = {6};
    Autoencoder model(cfg);
    bool seen = false;
    for (Tensor* t : model.parameters()) {
        if (t->name != "enc0.b") continue;
        seen = true;
        int hidden = static_cast<int>(t->size() / 4);
        for (int k = 0; k < hidden; ++k) {
            CHECK(t->value[k] == 0.0);
            CHECK(t->value[hidden + k] == 1.0);
            CHECK(t->value[2 * hidden + k] == 0.0);
            CHECK(t->value[3 * hidden + k] == 0.0);
        }
    }
    REQUIRE(seen);
}

TEST_CASE("batched forward equals per-row forward", "[model]") {
    for (ModelFamily family : {ModelFamily::dense, ModelFamily::lstm, ModelFamily::bilstm}) {
        ModelConfig cfg = small_config(family);
        if (family != ModelFamily::dense) {
            cfg.encoder_widths = {6};
            cfg.decoder_widths = {6};
        }
        Autoencoder model(cfg);
        const int F = cfg.window * cfg.signals;
        std::mt19937_64 rng(23);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> X(3 * F);
        for (auto& v : X) v = u(rng);
        std::vector<double> batched = model.forward(X.data(), 3);
        for (int b = 0; b < 3; ++b) {
            std::vector<double> single = model.forward(X.data() + b * F, 1);
            for (int k = 0; k < F; ++k)
                REQUIRE_THAT(batched[b * F + k], Catch::Matchers::WithinAbs(single[k], 1e-12));
        }
    }
}

TEST_CASE("the first optimizer step moves each weight by the step size", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::dense);
    cfg.learning_rate = 1e-3;
    Autoencoder model(cfg);
    std::vector<std::vector<double>> before;
    for (Tensor* t : model.parameters()) before.push_back(t->value);
    model.zero_grads();
    std::mt19937_64 rng(31);
    for (Tensor* t : model.parameters())
        for (auto& g : t->grad) g = rng() % 2 ? 1.5 : -0.25;
    model.adam_step();
    // bias-corrected first step: m/sqrt(v) == sign(g) regardless of magnitude
    std::size_t ti = 0;
    for (Tensor* t : model.parameters()) {
        for (std::size_t k = 0; k < t->size(); ++k) {
            double moved = t->value[k] - before[ti][k];
            double expect = -cfg.learning_rate * (t->grad[k] > 0 ? 1.0 : -1.0);
            REQUIRE_THAT(moved, Catch::Matchers::WithinAbs(expect, 1e-7));
        }
        ++ti;
    }
}

TEST_CASE("training reduces reconstruction error on learnable data", "[model]") {
    ModelConfig cfg;
    cfg.family = ModelFamily::dense;
    cfg.encoder_widths = {24};
    cfg.latent = 6;
    cfg.decoder_widths = {24};
    cfg.window = 8;
    cfg.signals = 4;
    cfg.learning_rate = 3e-3;
    cfg.max_epochs = 40;
    cfg.patience = 40;
    cfg.batch_size = 32;
    cfg.seed = 11;
    Autoencoder model(cfg);
    auto train = wave_windows(256, 8, 4, 1);
    auto val = wave_windows(64, 8, 4, 2);
    TrainResult r = train_autoencoder(model, train, val);
    REQUIRE(!r.history.empty());
    CHECK(r.history.back().train_mse < r.history.front().train_mse / 4);
    CHECK(r.best_val < r.history.front().val_mse);
    CHECK(r.best_epoch >= 1);

    // the returned weights are the best-epoch weights: re-evaluating the
    // validation set reproduces best_val
    double acc = 0;
    std::size_t count = 0;
    for (const auto& w : val) {
        std::vector<double> X(w.data.begin(), w.data.end());
        const auto& R = model.forward(X.data(), 1);
        for (std::size_t k = 0; k < R.size(); ++k) {
            double d = R[k] - X[k];
            acc += d * d;
        }
        count += R.size();
    }
    CHECK_THAT(acc / static_cast<double>(count), Catch::Matchers::WithinRel(r.best_val, 1e-9));
}

TEST_CASE("a frozen optimizer stops early once validation stalls", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::dense);
    cfg.learning_rate = 0.0;  // weights never move, epoch 1 stays best
    cfg.max_epochs = 50;
    cfg.patience = 3;
    Autoencoder model(cfg);
    auto train = random_windows(32, 4, 3, 41);
    auto val = random_windows(16, 4, 3, 43);
    TrainResult r = train_autoencoder(model, train, val);
    CHECK(r.early_stopped);
    CHECK(r.best_epoch == 1);
    CHECK(r.history.size() == 4);  // best epoch plus patience misses
}

TEST_CASE("non-finite losses abort training", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::dense);
    Autoencoder model(cfg);
    auto train = random_windows(8, 4, 3, 47);
    train[3].data[5] = std::numeric_limits<float>::quiet_NaN();
    auto val = random_windows(4, 4, 3, 48);
    CHECK_THROWS_AS(train_autoencoder(model, train, val), DataError);
}

TEST_CASE("model files round trip weights at float precision", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::lstm);
    cfg.encoder_widths = {6};
    cfg.decoder_widths = {6};
    Autoencoder model(cfg);
    ModelProvenance prov;
    prov.tick_us = 10000;
    prov.selection_hash = 0x1122334455667788ull;
    prov.best_epoch = 17;
    prov.best_val = 0.001234;
    prov.epochs_run = 30;
    std::string path = (std::filesystem::temp_directory_path() / "xc_model_rt.bin").string();
    save_model(path, model, prov);

    LoadedModel loaded = load_model(path);
    CHECK(loaded.provenance.tick_us == prov.tick_us);
    CHECK(loaded.provenance.selection_hash == prov.selection_hash);
    CHECK(loaded.provenance.best_epoch == 17);
    CHECK(loaded.provenance.best_val == prov.best_val);
    CHECK(loaded.provenance.epochs_run == 30);
    CHECK(loaded.model.config().family == ModelFamily::lstm);
    CHECK(loaded.model.config().window == cfg.window);

    auto orig = model.parameters();
    auto back = loaded.model.parameters();
    REQUIRE(orig.size() == back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i]->name == back[i]->name);
        REQUIRE(orig[i]->size() == back[i]->size());
        for (std::size_t k = 0; k < orig[i]->size(); ++k)
            CHECK(back[i]->value[k] == static_cast<double>(static_cast<float>(orig[i]->value[k])));
    }
    std::remove(path.c_str());
}

TEST_CASE("loading a non-model container fails cleanly", "[model]") {
    Container c;
    c.kind = ContainerKind::calibration;
    c.meta["q"] = "0.99";
    std::string path = (std::filesystem::temp_directory_path() / "xc_not_model.bin").string();
    write_container_file(path, c);
    CHECK_THROWS_AS(load_model(path), DataError);
    std::remove(path.c_str());
}

TEST_CASE("degenerate model shapes are rejected", "[model]") {
    ModelConfig cfg = small_config(ModelFamily::dense);
    cfg.latent = 0;
    CHECK_THROWS_AS(Autoencoder(cfg), DataError);
    cfg = small_config(ModelFamily::dense);
    cfg.latent = cfg.window * cfg.signals;
    CHECK_THROWS_AS(Autoencoder(cfg), DataError);
    cfg = small_config(ModelFamily::dense);
    cfg.window = 0;
    CHECK_THROWS_AS(Autoencoder(cfg), DataError);
    cfg = small_config(ModelFamily::dense);
    cfg.encoder_widths = {8, 0};
    CHECK_THROWS_AS(Autoencoder(cfg), DataError);
    cfg = small_config(ModelFamily::bilstm);
    cfg.encoder_widths = {7};  // bidirectional halves must be whole
    CHECK_THROWS_AS(Autoencoder(cfg), DataError);
}

TEST_CASE("training history serializes as csv", "[model]") {
    TrainResult r;
    r.history.push_back({1, 0.5, 0.25});
    std::ostringstream os;
    write_history_csv(os, r);
    CHECK(os.str() == "epoch,train_mse,val_mse\n1,0.5,0.25\n");
}
