#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace fusion {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

    explicit ConfusionMatrix(Eigen::Index classes = 7) : counts_(Counts::Zero(classes, classes)) {}

    static ConfusionMatrix from_predictions(std::span<const int> predictions, std::span<const int> labels,
                                            Eigen::Index classes = 7);

    void add(int truth, int predicted);

    const Counts& counts() const { return counts_; }
    Eigen::Index classes() const { return counts_.rows(); }
    std::int64_t total() const { return counts_.sum(); }

    Eigen::MatrixXd as_real() const { return counts_.cast<double>(); }
    /// Each row divided by its sum, times 100; empty rows stay zero.
    Eigen::MatrixXd row_percent() const;

    std::string to_csv(std::span<const std::string> names = {}) const;
    std::string to_table(std::span<const std::string> names = {}) const;

private:
    Counts counts_;
};

struct F1Scores {
    Eigen::VectorXd precision;
    Eigen::VectorXd recall;
    Eigen::VectorXd f1;
    double macro_f1 = 0.0; ///< unweighted mean over classes
};

/// Works on counts or on percent-valued matrices alike.
F1Scores f1_scores(const Eigen::MatrixXd& confusion);
inline F1Scores f1_scores(const ConfusionMatrix& cm) { return f1_scores(cm.as_real()); }

double accuracy(const Eigen::MatrixXd& confusion);
inline double accuracy(const ConfusionMatrix& cm) { return accuracy(cm.as_real()); }

/// Mean silhouette with Euclidean distance; points are rows. Members of a
/// singleton cluster contribute 0.
double silhouette(const Eigen::MatrixXd& points, std::span<const int> labels);

/// Davies-Bouldin index with mean-distance-to-centroid dispersion. Returns
/// +infinity (with a warning) if two centroids coincide.
double davies_bouldin(const Eigen::MatrixXd& points, std::span<const int> labels);

struct MetricsReport {
    double accuracy = 0.0;
    Eigen::VectorXd precision;
    Eigen::VectorXd recall;
    Eigen::VectorXd f1;
    double macro_f1 = 0.0;
    double silhouette = 0.0;
    double davies_bouldin = 0.0;
};

MetricsReport make_report(const ConfusionMatrix& cm, const Eigen::MatrixXd& embeddings, std::span<const int> labels);
nlohmann::json to_json(const MetricsReport& report, std::span<const std::string> class_names = {});

} // namespace fusion
