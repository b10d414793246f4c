#include "pathryoshka/loss.hpp"

#include <cmath>
#include <sstream>

namespace pathryoshka {

bool LossReport::finite() const {
    if (!std::isfinite(total) || !std::isfinite(cls_aligned) || !std::isfinite(cls_nonaligned) ||
        !std::isfinite(patch_aligned))
        return false;
    for (auto& [k, v] : breakdown)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string LossReport::dump() const {
    std::ostringstream os;
    os << "total=" << total << " cls_aligned=" << cls_aligned << " cls_nonaligned=" << cls_nonaligned
       << " patch_aligned=" << patch_aligned;
    for (auto& [k, v] : breakdown) os << ' ' << k << '=' << v;
    return os.str();
}

double cosine_loss(const Eigen::VectorXf& a, const Eigen::VectorXf& b, double eps) {
    check(a.size() == b.size(), Errc::ShapeError, "cosine on mismatched dims");
    double na = std::max(double(a.norm()), eps);
    double nb = std::max(double(b.norm()), eps);
    return 1.0 - double(a.dot(b)) / (na * nb);
}

namespace {

double batch_cosine_loss(const MatF& a, const MatF& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeError, "cosine batch dims");
    check(a.rows() > 0, Errc::ShapeError, "cosine on empty batch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double na = std::max(double(a.row(i).norm()), kCosineEps);
        double nb = std::max(double(b.row(i).norm()), kCosineEps);
        acc += 1.0 - double(a.row(i).dot(b.row(i))) / (na * nb);
    }
    return acc / double(a.rows());
}

double batch_mse(const MatF& a, const MatF& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeError, "mse batch dims");
    check(a.size() > 0, Errc::ShapeError, "mse on empty batch");
    return (a - b).cast<double>().squaredNorm() / double(a.size());
}

}  // namespace

std::pair<double, std::vector<std::pair<std::string, double>>> cls_loss(
    const MatF& student_cls, const std::map<std::string, MatF>& teacher_cls, const HeadBank& bank) {
    double total = 0.0;
    std::vector<std::pair<std::string, double>> breakdown;
    for (const auto& name : bank.teacher_names) {
        auto it = teacher_cls.find(name);
        check(it != teacher_cls.end(), Errc::KeyError, "missing teacher CLS output: " + name);
        for (int m : bank.levels.levels) {
            MatF projected = head_forward(
                bank.head(bank.teacher_index(name), bank.level_index(m), HeadKind::cls),
                MatF(student_cls.leftCols(m)));
            double v = batch_cosine_loss(projected, it->second);
            total += v;
            breakdown.push_back({name + "/m" + std::to_string(m), v});
        }
    }
    return {total, breakdown};
}

std::pair<double, std::vector<std::pair<std::string, double>>> patch_loss(
    const MatF& student_patches, const std::map<std::string, MatF>& teacher_patches_std, const HeadBank& bank) {
    double total = 0.0;
    std::vector<std::pair<std::string, double>> breakdown;
    for (const auto& name : bank.teacher_names) {
        auto it = teacher_patches_std.find(name);
        check(it != teacher_patches_std.end(), Errc::KeyError, "missing teacher patch output: " + name);
        check(it->second.rows() == student_patches.rows(), Errc::ShapeError,
              "teacher patch grid not resampled to student grid: " + name);
        for (int m : bank.levels.levels) {
            MatF projected = project_patches(bank, student_patches, name, m);
            double v = batch_mse(projected, it->second);
            total += v;
            breakdown.push_back({name + "/m" + std::to_string(m), v});
        }
    }
    return {total, breakdown};
}

LossReport total_loss(const CropOutputs& aligned, const CropOutputs* nonaligned, const HeadBank& bank,
                      const LossWeights& weights) {
    LossReport r;
    auto [ca, ba] = cls_loss(aligned.student_cls, aligned.teacher_cls, bank);
    r.cls_aligned = ca;
    for (auto& [k, v] : ba) r.breakdown.push_back({k + "/cls_aligned", v});

    if (nonaligned != nullptr) {
        auto [cn, bn] = cls_loss(nonaligned->student_cls, nonaligned->teacher_cls, bank);
        r.cls_nonaligned = cn;
        for (auto& [k, v] : bn) r.breakdown.push_back({k + "/cls_nonaligned", v});
    }

    auto [pa, bp] = patch_loss(aligned.student_patches, aligned.teacher_patches_std, bank);
    r.patch_aligned = pa;
    for (auto& [k, v] : bp) r.breakdown.push_back({k + "/patch_aligned", v});

    r.total = weights.w_cls * (r.cls_aligned + r.cls_nonaligned) + weights.w_patch * r.patch_aligned;
    check(r.finite(), Errc::NonFiniteLoss, "non-finite loss: " + r.dump());
    return r;
}

}  // namespace pathryoshka
