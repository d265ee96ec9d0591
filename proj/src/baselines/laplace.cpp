#include "uac/baselines.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace uac::baselines {

using diffcore::RngStream;
using diffcore::Tensor;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using MapRM = Eigen::Map<MatrixRM>;

namespace {

constexpr double kEigenFloor = 1e-12;

// [features | 1]
Eigen::MatrixXd augment(const Tensor& features, std::size_t f)
{
    if (features.rank() == 0)
        return Eigen::MatrixXd(0, f + 1);
    if (features.rank() != 2 || features.dim(1) != f)
        throw diffcore::ShapeError("Laplace features must be [N, " + std::to_string(f) + "], got " +
                                   diffcore::shape_to_string(features.shape()));
    const std::size_t n = features.dim(0);
    Eigen::MatrixXd phi(n, f + 1);
    if (n) {
        phi.leftCols(f) = ConstMapRM(features.data(), n, f);
        phi.col(f).setOnes();
    }
    return phi;
}

void check_theta(const Tensor& theta)
{
    if (theta.rank() != 2 || theta.dim(0) < 2 || theta.dim(1) < 2)
        throw diffcore::ShapeError("theta must be [C, F + 1] with C >= 2");
}

}  // namespace

Tensor last_layer_hessian(const Tensor& theta, const Tensor& features, double tau)
{
    check_theta(theta);
    const std::size_t c = theta.dim(0), f1 = theta.dim(1), p = c * f1;
    const Eigen::MatrixXd phi = augment(features, f1 - 1);
    const std::size_t n = phi.rows();

    Eigen::MatrixXd probs = phi * ConstMapRM(theta.data(), c, f1).transpose();  // [N, C]
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = probs.row(i).maxCoeff();
        probs.row(i) = (probs.row(i).array() - mx).exp();
        probs.row(i) /= probs.row(i).sum();
    }

    Tensor out({p, p});
    MapRM h(out.data(), p, p);
    for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = a; b < c; ++b) {
            Eigen::VectorXd w = -probs.col(a).cwiseProduct(probs.col(b));
            if (a == b)
                w += probs.col(a);
            const Eigen::MatrixXd block = phi.transpose() * w.asDiagonal() * phi;
            h.block(a * f1, b * f1, f1, f1) = block;
            if (a != b)
                h.block(b * f1, a * f1, f1, f1) = block.transpose();
        }
    }
    h = 0.5 * (h + h.transpose()).eval();
    h.diagonal().array() += tau;
    return out;
}

LaplacePosterior laplace_fit(const Tensor& theta_map, const Tensor& features, double tau, std::size_t samples)
{
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("prior precision must be positive and finite");
    if (samples < 1)
        throw std::invalid_argument("Laplace predictive sample count must be at least 1");
    const Tensor hess = last_layer_hessian(theta_map, features, tau);
    const std::size_t p = hess.dim(0);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ConstMapRM(hess.data(), p, p));
    if (eig.info() != Eigen::Success)
        throw std::domain_error("Laplace Hessian eigendecomposition failed");
    const double smallest = eig.eigenvalues().minCoeff();
    if (!(smallest > 0.0)) {
        std::ostringstream msg;
        msg << "Laplace Hessian is not positive definite (smallest eigenvalue " << smallest
            << "); increase the prior precision";
        throw std::domain_error(msg.str());
    }

    LaplacePosterior post;
    post.theta_map = theta_map;
    post.prior_precision = tau;
    post.samples = samples;
    post.covariance = Tensor({p, p});
    MapRM cov(post.covariance.data(), p, p);
    const Eigen::MatrixXd& v = eig.eigenvectors();
    const Eigen::MatrixXd full = v * eig.eigenvalues().cwiseInverse().asDiagonal() * v.transpose();
    cov = 0.5 * (full + full.transpose());
    return post;
}

Tensor penultimate_features(const model::UacModel& m, const std::vector<datasets::LabeledWindow>& windows)
{
    const auto& cls = m.classifier();
    const std::size_t last = cls.layer_count() - 1;
    const std::size_t f = cls.specs()[last].in_features;
    Tensor out({windows.size(), f});
    constexpr std::size_t chunk = 256;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        idx.resize(std::min(chunk, windows.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        Tensor x = model::encode(m, model::stack_windows(windows, idx));
        for (std::size_t l = 0; l < last; ++l)
            x = cls.layer(l).forward_eval(x);
        std::copy(x.values().begin(), x.values().end(), out.values().begin() + start * f);
    }
    return out;
}

Tensor last_layer_theta(const model::UacModel& m)
{
    const auto params = m.classifier().parameters();
    const Tensor& w = params[params.size() - 2]->value;  // [C, F]
    const Tensor& b = params.back()->value;               // [C]
    const std::size_t c = w.dim(0), f = w.dim(1);
    Tensor theta({c, f + 1});
    for (std::size_t i = 0; i < c; ++i) {
        std::copy(w.values().begin() + i * f, w.values().begin() + (i + 1) * f, theta.values().begin() + i * (f + 1));
        theta[i * (f + 1) + f] = b[i];
    }
    return theta;
}

LaplacePosterior laplace_fit_last_layer(const model::UacModel& m, const std::vector<datasets::LabeledWindow>& train,
                                        double tau, std::size_t samples)
{
    return laplace_fit(last_layer_theta(m), penultimate_features(m, train), tau, samples);
}

std::vector<double> laplace_predict_from_draws(const LaplacePosterior& post, std::span<const double> features,
                                               std::span<const double> draws, Warnings* warnings)
{
    const std::size_t c = post.classes(), f1 = post.features() + 1, p = c * f1;
    if (features.size() != f1 - 1)
        throw diffcore::ShapeError("laplace_predict: expected " + std::to_string(f1 - 1) + " features, got " +
                                   std::to_string(features.size()));
    if (draws.empty() || draws.size() % c != 0)
        throw std::invalid_argument("laplace_predict: draws must hold S >= 1 rows of C values");

    Eigen::VectorXd phi(f1);
    for (std::size_t i = 0; i + 1 < f1; ++i)
        phi[i] = features[i];
    phi[f1 - 1] = 1.0;
    const Eigen::VectorXd mean = ConstMapRM(post.theta_map.data(), c, f1) * phi;

    // Logit covariance J Sigma J^T with J = I_C kron phi^T.
    const ConstMapRM cov(post.covariance.data(), p, p);
    Eigen::MatrixXd zc(c, c);
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b)
            zc(a, b) = phi.dot(cov.block(a * f1, b * f1, f1, f1) * phi);
    zc = 0.5 * (zc + zc.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(zc);
    Eigen::VectorXd lambda = eig.eigenvalues();
    std::size_t clamped = 0;
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
        if (lambda[k] < kEigenFloor) {
            lambda[k] = kEigenFloor;
            ++clamped;
        }
    warn(warnings, "laplace_eigenvalue_clamped", clamped);
    const Eigen::MatrixXd factor = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();

    const std::size_t s = draws.size() / c;
    std::vector<double> sum(c, 0.0), z(c), prob(c);
    for (std::size_t t = 0; t < s; ++t) {
        const Eigen::Map<const Eigen::VectorXd> eps(draws.data() + t * c, c);
        const Eigen::VectorXd zt = mean + factor * eps;
        for (std::size_t j = 0; j < c; ++j)
            z[j] = zt[j];
        diffcore::softmax_into(z, prob);
        for (std::size_t j = 0; j < c; ++j)
            sum[j] += prob[j];
    }
    for (auto& v : sum)
        v /= static_cast<double>(s);
    return sum;
}

std::vector<double> laplace_predict(const LaplacePosterior& post, std::span<const double> features,
                                    std::size_t samples, RngStream& rng, Warnings* warnings)
{
    if (samples < 1)
        throw std::invalid_argument("Laplace predictive sample count must be at least 1");
    std::vector<double> draws(samples * post.classes());
    for (auto& v : draws)
        v = rng.normal();
    return laplace_predict_from_draws(post, features, draws, warnings);
}

std::vector<Prediction> laplace_predict_windows(const model::UacModel& m, const LaplacePosterior& post,
                                                const std::vector<datasets::LabeledWindow>& windows,
                                                const RngStream& rng, Warnings* warnings)
{
    const Tensor phi = penultimate_features(m, windows);
    const std::size_t f = post.features(), c = post.classes();
    const ConstMapRM theta(post.theta_map.data(), c, f + 1);
    std::vector<Prediction> out(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto row = phi.values().subspan(i * f, f);
        RngStream r = rng.fork(i);
        Prediction& pr = out[i];
        pr.probs = laplace_predict(post, row, post.samples, r, warnings);
        pr.logits.resize(c);
        for (std::size_t j = 0; j < c; ++j) {
            double z = theta(j, f);
            for (std::size_t k = 0; k < f; ++k)
                z += theta(j, k) * row[k];
            pr.logits[j] = z;
        }
        for (double v : pr.probs)
            if (v > 0.0)
                pr.entropy -= v * std::log(v);
    }
    return out;
}

void add_to_checkpoint(diffcore::CheckpointWriter& writer, const LaplacePosterior& post)
{
    writer.set_meta("laplace", {{"prior_precision", post.prior_precision}, {"samples", post.samples}});
    writer.add_tensor("laplace.theta_map", post.theta_map);
    writer.add_tensor("laplace.covariance", post.covariance);
}

LaplacePosterior posterior_from_checkpoint(const diffcore::Checkpoint& ckpt)
{
    if (!ckpt.meta().contains("laplace"))
        throw diffcore::CheckpointError("checkpoint has no Laplace posterior");
    LaplacePosterior post;
    post.prior_precision = ckpt.meta().at("laplace").at("prior_precision").get<double>();
    post.samples = ckpt.meta().at("laplace").at("samples").get<std::size_t>();
    post.theta_map = ckpt.tensor("laplace.theta_map");
    post.covariance = ckpt.tensor("laplace.covariance");
    const std::size_t p = post.theta_map.size();
    if (post.covariance.shape() != diffcore::Shape{p, p})
        throw diffcore::CheckpointError("Laplace covariance does not match theta_map");
    return post;
}

}  // namespace uac::baselines
