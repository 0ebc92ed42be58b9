#include "fusion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "fusion/errors.hpp"

namespace fusion {

using Eigen::Index;

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> predictions, std::span<const int> labels,
                                                  Index classes)
{
    if (predictions.size() != labels.size())
        throw ShapeError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
        cm.add(labels[i], predictions[i]);
    return cm;
}

void ConfusionMatrix::add(int truth, int predicted)
{
    if (truth < 0 || truth >= classes() || predicted < 0 || predicted >= classes())
        throw ConfigError("confusion_matrix: class index outside [0, " + std::to_string(classes()) + ")");
    ++counts_(truth, predicted);
}

Eigen::MatrixXd ConfusionMatrix::row_percent() const
{
    Eigen::MatrixXd p = as_real();
    for (Index r = 0; r < p.rows(); ++r) {
        const double s = p.row(r).sum();
        if (s > 0)
            p.row(r) *= 100.0 / s;
    }
    return p;
}

namespace {
std::string label_for(std::span<const std::string> names, Index i)
{
    return static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)] : std::to_string(i);
}
} // namespace

std::string ConfusionMatrix::to_csv(std::span<const std::string> names) const
{
    std::ostringstream os;
    os << "true\\pred";
    for (Index c = 0; c < classes(); ++c)
        os << ',' << label_for(names, c);
    os << '\n';
    for (Index r = 0; r < classes(); ++r) {
        os << label_for(names, r);
        for (Index c = 0; c < classes(); ++c)
            os << ',' << counts_(r, c);
        os << '\n';
    }
    return os.str();
}

std::string ConfusionMatrix::to_table(std::span<const std::string> names) const
{
    std::size_t w = 6;
    for (Index i = 0; i < classes(); ++i)
        w = std::max(w, label_for(names, i).size() + 1);
    const Eigen::MatrixXd pct = row_percent();
    std::ostringstream os;
    os << std::setw(static_cast<int>(w)) << "";
    for (Index c = 0; c < classes(); ++c)
        os << std::setw(static_cast<int>(w)) << label_for(names, c);
    os << "   (row %)\n" << std::fixed << std::setprecision(1);
    for (Index r = 0; r < classes(); ++r) {
        os << std::setw(static_cast<int>(w)) << label_for(names, r);
        for (Index c = 0; c < classes(); ++c)
            os << std::setw(static_cast<int>(w)) << pct(r, c);
        os << '\n';
    }
    return os.str();
}

F1Scores f1_scores(const Eigen::MatrixXd& cm)
{
    if (cm.rows() != cm.cols() || cm.rows() == 0)
        throw ShapeError("f1_scores expects a non-empty square matrix");
    const Eigen::VectorXd tp = cm.diagonal();
    const Eigen::VectorXd predicted = cm.colwise().sum().transpose();
    const Eigen::VectorXd actual = cm.rowwise().sum();
    F1Scores s;
    s.precision = Eigen::VectorXd::Zero(cm.rows());
    s.recall = Eigen::VectorXd::Zero(cm.rows());
    s.f1 = Eigen::VectorXd::Zero(cm.rows());
    for (Index c = 0; c < cm.rows(); ++c) {
        s.precision[c] = predicted[c] > 0 ? tp[c] / predicted[c] : 0.0;
        s.recall[c] = actual[c] > 0 ? tp[c] / actual[c] : 0.0;
        const double pr = s.precision[c] + s.recall[c];
        if (pr > 0)
            s.f1[c] = 2.0 * s.precision[c] * s.recall[c] / pr;
        else
            warn("class " + std::to_string(c) + " has precision + recall = 0; F1 set to 0");
    }
    s.macro_f1 = s.f1.mean();
    return s;
}

double accuracy(const Eigen::MatrixXd& cm)
{
    const double total = cm.sum();
    if (!(total > 0))
        throw ConfigError("accuracy of an empty confusion matrix");
    return cm.trace() / total;
}

namespace {

/// Dense cluster ids 0..K-1 in ascending label order.
std::vector<Index> cluster_ids(std::span<const int> labels, Index& clusters)
{
    std::map<int, Index> ids;
    for (int l : labels)
        ids.emplace(l, 0);
    Index next = 0;
    for (auto& [label, id] : ids)
        id = next++;
    clusters = next;
    std::vector<Index> out;
    out.reserve(labels.size());
    for (int l : labels)
        out.push_back(ids[l]);
    return out;
}

void check_clusters(const Eigen::MatrixXd& points, std::span<const int> labels, Index clusters)
{
    if (static_cast<std::size_t>(points.rows()) != labels.size())
        throw ShapeError("cluster metric: " + std::to_string(points.rows()) + " points vs " +
                         std::to_string(labels.size()) + " labels");
    if (clusters < 2)
        throw ConfigError("cluster metric needs at least two clusters");
}

} // namespace

double silhouette(const Eigen::MatrixXd& points, std::span<const int> labels)
{
    Index k = 0;
    const auto id = cluster_ids(labels, k);
    check_clusters(points, labels, k);
    Eigen::VectorXd size = Eigen::VectorXd::Zero(k);
    for (Index c : id)
        size[c] += 1.0;

    double total = 0.0;
    Eigen::VectorXd sums(k);
    for (Index i = 0; i < points.rows(); ++i) {
        const Index own = id[static_cast<std::size_t>(i)];
        if (size[own] < 2)
            continue;
        const Eigen::VectorXd d = (points.rowwise() - points.row(i)).rowwise().norm();
        sums.setZero();
        for (Index j = 0; j < points.rows(); ++j)
            sums[id[static_cast<std::size_t>(j)]] += d[j];
        const double a = sums[own] / (size[own] - 1.0);
        double b = std::numeric_limits<double>::infinity();
        for (Index c = 0; c < k; ++c)
            if (c != own)
                b = std::min(b, sums[c] / size[c]);
        const double denom = std::max(a, b);
        total += denom > 0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(points.rows());
}

double davies_bouldin(const Eigen::MatrixXd& points, std::span<const int> labels)
{
    Index k = 0;
    const auto id = cluster_ids(labels, k);
    check_clusters(points, labels, k);
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd size = Eigen::VectorXd::Zero(k);
    for (Index i = 0; i < points.rows(); ++i) {
        centroids.row(id[static_cast<std::size_t>(i)]) += points.row(i);
        size[id[static_cast<std::size_t>(i)]] += 1.0;
    }
    centroids = size.cwiseInverse().asDiagonal() * centroids;

    Eigen::VectorXd spread = Eigen::VectorXd::Zero(k);
    for (Index i = 0; i < points.rows(); ++i) {
        const Index c = id[static_cast<std::size_t>(i)];
        spread[c] += (points.row(i) - centroids.row(c)).norm();
    }
    spread = spread.cwiseQuotient(size);

    double total = 0.0;
    for (Index i = 0; i < k; ++i) {
        double worst = 0.0;
        for (Index j = 0; j < k; ++j) {
            if (j == i)
                continue;
            const double sep = (centroids.row(i) - centroids.row(j)).norm();
            if (sep == 0.0) {
                warn("davies_bouldin: clusters " + std::to_string(i) + " and " + std::to_string(j) +
                     " have coincident centroids");
                return std::numeric_limits<double>::infinity();
            }
            worst = std::max(worst, (spread[i] + spread[j]) / sep);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

MetricsReport make_report(const ConfusionMatrix& cm, const Eigen::MatrixXd& embeddings, std::span<const int> labels)
{
    MetricsReport r;
    r.accuracy = accuracy(cm);
    const auto f = f1_scores(cm);
    r.precision = f.precision;
    r.recall = f.recall;
    r.f1 = f.f1;
    r.macro_f1 = f.macro_f1;
    r.silhouette = silhouette(embeddings, labels);
    r.davies_bouldin = davies_bouldin(embeddings, labels);
    return r;
}

nlohmann::json to_json(const MetricsReport& r, std::span<const std::string> names)
{
    nlohmann::json per_class = nlohmann::json::array();
    for (Index c = 0; c < r.f1.size(); ++c)
        per_class.push_back({{"class", label_for(names, c)},
                             {"precision", r.precision[c]},
                             {"recall", r.recall[c]},
                             {"f1", r.f1[c]}});
    return {{"accuracy", r.accuracy},
            {"macro_f1", r.macro_f1},
            {"per_class", std::move(per_class)},
            {"silhouette", r.silhouette},
            {"davies_bouldin", r.davies_bouldin}};
}

} // namespace fusion
