#include "fixtures.hpp"
#include "uac/diffcore/gradcheck.hpp"
#include "uac/diffcore/ops.hpp"
#include "uac/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace uac;
using namespace uac::model;
using diffcore::RngStream;
using diffcore::Shape;
using diffcore::Tensor;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng)
{
    Tensor t(std::move(shape));
    for (auto& v : t.values())
        v = rng.normal();
    return t;
}

void zero_network(diffcore::Network& net)
{
    for (auto* p : net.parameters())
        p->value.fill(0.0);
}

double norm(const std::vector<double>& v)
{
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

double entropy(const std::vector<double>& p)
{
    double h = 0.0;
    for (double v : p)
        if (v > 0)
            h -= v * std::log(v);
    return h;
}

}  // namespace

TEST_CASE("encoder feature size")
{
    // 100 -> 91 -> 82 -> 41 -> 32 -> 16, times 256 channels.
    UacModel full(Architecture{}, 0, 1);
    CHECK(full.feature_size() == 16 * 256);
    CHECK(full.feature_size() == 4096);

    Architecture a;
    a.window = 50;  // 50 -> 41 -> 32 -> 16 -> 7 -> 3
    a.conv_channels = {16, 16, 32};
    CHECK(UacModel(a, 0, 1).feature_size() == 3 * 32);

    UacModel m(fixture::small_arch(), 3);
    CHECK(m.feature_size() == 18);
    RngStream rng(1);
    const Tensor w = random_tensor({3, 20}, rng);
    CHECK(encode(m, w) == encode(m, w));
    const Tensor b = random_tensor({5, 3, 20}, rng);
    CHECK(encode(m, b).shape() == Shape{5, 18});
    CHECK_THROWS_AS(encode(m, random_tensor({3, 21}, rng)), diffcore::ShapeError);

    a.window = 30;
    CHECK_THROWS_AS(UacModel(a, 0), diffcore::ShapeError);
}

TEST_CASE("heads")
{
    UacModel m(fixture::small_arch(), 4);
    RngStream rng(2);
    const Tensor h = random_tensor({7, 18}, rng);
    const HeadOutput out = heads(m, h);
    CHECK(out.logits.shape() == Shape{7, 3});
    CHECK(out.log_variance.shape() == Shape{7, 1});
    for (double s : out.log_variance.values())
        CHECK(std::exp(s) > 0.0);

    for (std::size_t i = 0; i < 7; ++i) {
        Tensor row({18}, std::vector<double>(h.values().begin() + i * 18, h.values().begin() + (i + 1) * 18));
        const HeadOutput one = heads(m, row);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(one.logits[c] == doctest::Approx(out.logits[i * 3 + c]).epsilon(1e-12));
        CHECK(one.log_variance[0] == doctest::Approx(out.log_variance[i]).epsilon(1e-12));
    }

    zero_network(m.classifier());
    zero_network(m.variance());
    const HeadOutput zero = heads(m, h);
    for (double v : zero.logits.values())
        CHECK(v == 0.0);
    for (double v : zero.log_variance.values())
        CHECK(std::exp(v) == 1.0);

    auto arch = fixture::small_arch();
    arch.per_class_variance = true;
    CHECK(heads(UacModel(arch, 4), h).log_variance.shape() == Shape{7, 3});

    m.classifier().parameters().back()->value[0] = std::nan("");
    CHECK_THROWS_AS(heads(m, h), std::domain_error);
}

TEST_CASE("mc_probabilities")
{
    RngStream rng(10);
    const std::vector<double> zero{0.0, 0.0};
    CHECK(mc_probabilities(zero, 0.0, 7, rng) == std::vector<double>{0.5, 0.5});
    const std::vector<double> l3{std::log(3.0), 0.0};
    const auto p3 = mc_probabilities(l3, 0.0, 100, rng);
    CHECK(p3[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(p3[1] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(rng == RngStream(10));  // sigma = 0 draws nothing

    const std::vector<double> l5{5.0, 0.0};
    RngStream a(11), b(11);
    CHECK(entropy(mc_probabilities(l5, 5.0, 10000, a)) > entropy(mc_probabilities(l5, 0.0, 10000, b)));

    CHECK_THROWS_AS(mc_probabilities(l5, -1.0, 10, a), std::invalid_argument);
    CHECK_THROWS_AS(mc_probabilities(l5, 1.0, 0, a), std::invalid_argument);

    // sigma = 0 is softmax, bit for bit, for every T.
    RngStream gen(12);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> z(2 + gen.below(6));
        for (auto& v : z)
            v = 3.0 * gen.normal();
        for (std::size_t t : {1u, 10u, 100u}) {
            RngStream r = gen.fork(t);
            CHECK(mc_probabilities(z, 0.0, t, r) == diffcore::softmax(z));
        }
        RngStream r = gen.fork("noisy");
        const auto p = mc_probabilities(z, 1.0 + gen.uniform(), 50, r);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
        for (double v : p) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    // Per-class scales with equal entries reproduce the shared form.
    const std::vector<double> z{1.0, -0.5, 0.3};
    const std::vector<double> sig{0.7, 0.7, 0.7};
    RngStream s1(13), s2(13);
    CHECK(mc_probabilities(z, sig, 40, s1) == mc_probabilities(z, 0.7, 40, s2));
}

TEST_CASE("Monte Carlo estimates concentrate as T grows")
{
    const std::vector<double> z{1.0, 0.0, -1.0};
    const RngStream master(99);
    auto spread = [&](std::size_t t) {
        std::vector<std::vector<double>> runs;
        for (std::size_t k = 0; k < 30; ++k) {
            RngStream r = master.fork(t).fork(k);
            runs.push_back(mc_probabilities(z, 1.5, t, r));
        }
        std::vector<double> sd(3);
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0, var = 0.0;
            for (const auto& p : runs)
                mean += p[c] / 30.0;
            for (const auto& p : runs)
                var += (p[c] - mean) * (p[c] - mean) / 29.0;
            sd[c] = std::sqrt(var);
        }
        return sd;
    };
    const auto sd10 = spread(10), sd100 = spread(100);
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(sd100[c] < sd10[c]);
}

TEST_CASE("Monte Carlo cross-entropy")
{
    RngStream rng(20);
    const std::vector<double> sure{100.0, 0.0};
    CHECK(mc_cross_entropy(sure, {}, 0, 10, rng).loss < 1e-40);
    const std::vector<double> flat{0.0, 0.0};
    CHECK(mc_cross_entropy(flat, {}, 1, 10, rng).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Warnings w;
    const std::vector<double> wrong{0.0, 100.0};
    CHECK(mc_cross_entropy(wrong, {}, 0, 10, rng, &w).loss == doctest::Approx(-std::log(1e-12)));
    CHECK(w.count("loss_probability_clamped") == 1);
    CHECK_THROWS_AS(mc_cross_entropy(flat, {}, 2, 10, rng), std::invalid_argument);

    // The loss is -log of the mean the sampler returns, given the same draws.
    const std::vector<double> z{0.4, -1.2, 0.9};
    const std::vector<double> s{0.3};
    RngStream r1(21), r2(21);
    const double loss = mc_cross_entropy(z, s, 1, 64, r1).loss;
    const auto p = mc_probabilities(z, std::exp(0.15), 64, r2);
    CHECK(loss == doctest::Approx(-std::log(p[1])).epsilon(1e-12));
}

TEST_CASE("Monte Carlo cross-entropy gradients match finite differences")
{
    for (bool per_class : {false, true}) {
        CAPTURE(per_class);
        RngStream gen(30 + per_class);
        std::vector<double> z{0.5, -0.3, 1.1, 0.0};
        std::vector<double> s(per_class ? 4 : 1);
        for (auto& v : s)
            v = 0.5 * gen.normal();
        const RngStream frozen = gen.fork("eps");
        auto loss = [&] {
            RngStream r = frozen;
            return mc_cross_entropy(z, s, 2, 50, r).loss;
        };
        RngStream r = frozen;
        const McLoss g = mc_cross_entropy(z, s, 2, 50, r);
        RngStream probe(1);
        CHECK(diffcore::check_input_gradient(z, g.grad_logits, loss, 4, probe) < 1e-6);
        CHECK(diffcore::check_input_gradient(s, g.grad_log_variance, loss, s.size(), probe) < 1e-6);
    }
}

TEST_CASE("uac_loss gradients match finite differences with frozen draws")
{
    for (bool per_class : {false, true}) {
        CAPTURE(per_class);
        auto arch = fixture::small_arch();
        arch.per_class_variance = per_class;
        UacModel m(arch, 5, 20);
        RngStream gen(40);
        const Tensor batch = random_tensor({4, 3, 20}, gen);
        const std::vector<int> labels{0, 2, 1, 2};
        const RngStream frozen = gen.fork("draws");
        auto params = m.parameters();
        const diffcore::LossFn fn = [&](bool) {
            RngStream r = frozen;
            return uac_loss(m, batch, labels, r);
        };
        RngStream probe(41);
        CHECK(diffcore::check_gradients(params, fn, 300, probe) < 1e-4);
    }
}

TEST_CASE("high predicted variance attenuates the logit gradient on a misclassified sample")
{
    const std::vector<double> z{3.0, 0.0};
    const RngStream frozen(50);
    RngStream r0 = frozen, r2 = frozen;
    const McLoss plain = mc_cross_entropy(z, {}, 1, 100, r0);
    const std::vector<double> s2{std::log(4.0)};  // sigma = 2
    const McLoss noisy = mc_cross_entropy(z, s2, 1, 100, r2);
    CHECK(norm(noisy.grad_logits) < norm(plain.grad_logits));
    CHECK(noisy.loss < plain.loss);
}

TEST_CASE("plateau schedule")
{
    PlateauScheduler s(1e-3, 0.1, 10);
    std::size_t cuts = 0;
    for (int e = 0; e < 11; ++e)
        cuts += s.observe(0.5);
    CHECK(cuts == 1);
    CHECK(s.reductions() == 1);
    CHECK(s.rate() == doctest::Approx(1e-4).epsilon(1e-15));
    for (int e = 0; e < 9; ++e)
        s.observe(0.5);
    CHECK(s.reductions() == 1);
    s.observe(0.5);
    CHECK(s.reductions() == 2);
    s.observe(0.6);
    for (int e = 0; e < 9; ++e)
        s.observe(0.6);
    CHECK(s.reductions() == 2);

    CHECK_THROWS(PlateauScheduler(1e-3, 1.0, 10));
    CHECK_THROWS(PlateauScheduler(1e-3, 0.1, 0));
}

TEST_CASE("training")
{
    const auto split = fixture::small_split();
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.max_epochs = 30;
    cfg.mc_samples = 20;
    cfg.batch_size = 16;
    cfg.seed = 7;

    UacModel m(fixture::small_arch(), 7);
    const TrainHistory h = train(m, split, cfg);
    REQUIRE(h.epochs.size() >= 10);
    auto window_mean = [&](std::size_t from, std::size_t n) {
        double s = 0;
        for (std::size_t i = from; i < from + n; ++i)
            s += h.epochs[i].train_loss;
        return s / n;
    };
    CHECK(window_mean(h.epochs.size() - 5, 5) < window_mean(0, 5));
    CHECK(h.epochs.back().train_loss < h.epochs.front().train_loss);
    CHECK(h.best_validation_accuracy > 0.6);

    // The returned parameters are those of the best epoch.
    const auto preds =
        predict_windows(m, split.validation, RngStream(cfg.seed, diffcore::hash_name("train")).fork("validation").fork(h.best_epoch - 1));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += static_cast<int>(diffcore::argmax(preds[i].probs)) == split.validation[i].label;
    CHECK(static_cast<double>(hits) / preds.size() == h.best_validation_accuracy);

    UacModel again(fixture::small_arch(), 7);
    CHECK(train(again, split, cfg) == h);
    CHECK(again.classifier().parameters()[0]->value == m.classifier().parameters()[0]->value);
}

TEST_CASE("training stops early and fails loudly")
{
    const auto split = fixture::small_split();
    TrainConfig cfg;
    cfg.max_epochs = 50;
    cfg.early_stop_patience = 3;
    cfg.mc_samples = 2;
    UacModel m(fixture::small_arch(), 1);
    // Parameters never move; only batch-norm running statistics change.
    const BatchObjective frozen = [](UacModel& model, const Tensor& x, std::span<const int> y, RngStream& r,
                                     Warnings* w) {
        const double l = uac_loss(model, x, y, r, w);
        model.zero_grad();
        return l;
    };
    const auto h = train(m, split, cfg, nullptr, frozen);
    CHECK(h.stopped_early);
    CHECK(h.epochs.size() == h.best_epoch + 3);

    const BatchObjective bad = [](UacModel&, const Tensor&, std::span<const int>, RngStream&, Warnings*) {
        return std::nan("");
    };
    try {
        train(m, split, cfg, nullptr, bad);
        FAIL("expected a training error");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("epoch 1 batch 1") != std::string::npos);
    }
    datasets::DatasetSplit empty;
    CHECK_THROWS_AS(train(m, empty, cfg), std::invalid_argument);
    cfg.plateau_factor = 1.5;
    CHECK_THROWS_AS(train(m, split, cfg), std::invalid_argument);
}

TEST_CASE("predict_sample")
{
    UacModel m(fixture::small_arch(), 8, 50);
    RngStream gen(60);
    const Tensor w = random_tensor({3, 20}, gen);
    RngStream a(61), b(61);
    const Prediction p1 = predict_sample(m, w, a), p2 = predict_sample(m, w, b);
    CHECK(p1.probs == p2.probs);
    CHECK(p1.entropy == p2.entropy);
    CHECK(std::abs(std::accumulate(p1.probs.begin(), p1.probs.end(), 0.0) - 1.0) < 1e-9);
    CHECK(p1.entropy == doctest::Approx(entropy(p1.probs)).epsilon(1e-12));

    // Zero heads give zero logits and sigma = 1; the noise averages out to uniform.
    UacModel zeroed = m;
    zero_network(zeroed.classifier());
    zero_network(zeroed.variance());
    zeroed.set_mc_samples(40000);
    RngStream c(62);
    const Prediction u = predict_sample(zeroed, w, c);
    for (double v : u.probs)
        CHECK(v == doctest::Approx(1.0 / 3).epsilon(0.01));
    CHECK(u.entropy == doctest::Approx(std::log(3.0)).epsilon(1e-3));
    CHECK(u.log_variance == 0.0);

    auto arch = fixture::small_arch();
    arch.variance_head = false;
    UacModel plain(arch, 8, 50);
    RngStream d(63);
    const Prediction sp = predict_sample(plain, w, d);
    CHECK(sp.probs == diffcore::softmax(sp.logits));
    CHECK(d == RngStream(63));

    // Batched prediction agrees with per-window prediction on forked streams.
    std::vector<datasets::LabeledWindow> windows(5);
    for (auto& lw : windows)
        lw.data = random_tensor({3, 20}, gen);
    const RngStream root(64);
    const auto batch = predict_windows(m, windows, root);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        RngStream r = root.fork(i);
        const auto single = predict_sample(m, windows[i].data, r);
        for (std::size_t c2 = 0; c2 < 3; ++c2)
            CHECK(batch[i].probs[c2] == doctest::Approx(single.probs[c2]).epsilon(1e-12));
    }
}

TEST_CASE("model checkpoint round trip")
{
    const auto split = fixture::small_split();
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 2;
    cfg.mc_samples = 5;
    for (bool head : {true, false}) {
        auto arch = fixture::small_arch();
        arch.variance_head = head;
        UacModel m(arch, 9);
        train(m, split, cfg);

        diffcore::CheckpointWriter w1;
        add_to_checkpoint(w1, m);
        const std::string bytes = w1.serialize();
        const UacModel back = model_from_checkpoint(diffcore::Checkpoint::parse(bytes));
        diffcore::CheckpointWriter w2;
        add_to_checkpoint(w2, back);
        CHECK(w2.serialize() == bytes);
        CHECK(back.architecture() == arch);
        CHECK(back.mc_samples() == 5);

        const RngStream r(70);
        const auto p1 = predict_windows(m, split.test, r), p2 = predict_windows(back, split.test, r);
        for (std::size_t i = 0; i < p1.size(); ++i)
            CHECK(p1[i].probs == p2[i].probs);
    }
}
