#pragma once

#include <map>
#include <string>
#include <vector>

#include "pathryoshka/heads.hpp"
#include "pathryoshka/tape.hpp"

namespace pathryoshka {

inline constexpr double kCosineEps = 1e-8;

struct LossWeights {
    double w_cls = 1.0;
    double w_patch = 1.0;
};

struct LossReport {
    double total = 0.0;
    double cls_aligned = 0.0;
    double cls_nonaligned = 0.0;
    double patch_aligned = 0.0;
    // keys: "{teacher}/m{level}/{cls_aligned|cls_nonaligned|patch_aligned}"
    std::vector<std::pair<std::string, double>> breakdown;

    bool finite() const;
    std::string dump() const;  // diagnostic one-liner per component
};

// 1 - <a,b>/(|a||b|); norms clamped at eps, so zero vectors read as orthogonal.
double cosine_loss(const Eigen::VectorXf& a, const Eigen::VectorXf& b, double eps = kCosineEps);

// ---- plain (forward-only) loss ops ----
// Reduction convention, fixed: every (teacher, level) term is a mean over the
// batch (and tokens and channels for MSE); terms are then summed over
// teachers and levels.

std::pair<double, std::vector<std::pair<std::string, double>>> cls_loss(
    const MatF& student_cls, const std::map<std::string, MatF>& teacher_cls, const HeadBank& bank);

std::pair<double, std::vector<std::pair<std::string, double>>> patch_loss(
    const MatF& student_patches, const std::map<std::string, MatF>& teacher_patches_std, const HeadBank& bank);

struct CropOutputs {
    MatF student_cls;                                    // B x d
    MatF student_patches;                                // (B*G^2) x d; may be empty for the non-aligned crop
    std::map<std::string, MatF> teacher_cls;             // per teacher: B x d_t
    std::map<std::string, MatF> teacher_patches_std;     // per teacher: standardized (B*G^2) x d_t
};

// w_cls*(cls(aligned) + cls(nonaligned)) + w_patch*patch(aligned).
// nonaligned == nullptr disables the non-aligned term (cropping ablation).
LossReport total_loss(const CropOutputs& aligned, const CropOutputs* nonaligned, const HeadBank& bank,
                      const LossWeights& weights = {});

// ---- tape builders (training path) ----

template <class S>
struct TeacherTargetsT {
    std::string name;
    MatR<S> cls_aligned;          // B x d_t
    MatR<S> cls_nonaligned;       // B x d_t; empty when crop ablation is on
    MatR<S> patches_aligned_std;  // (B*G^2) x d_t, resampled + standardized
};

template <class S>
struct LossNodes {
    int total = -1;
    struct Term {
        std::string teacher;
        int level = 0;
        int cls_aligned = -1;
        int cls_nonaligned = -1;
        int patch_aligned = -1;
    };
    std::vector<Term> terms;
    LossWeights weights;
};

template <class S>
LossNodes<S> build_total_loss(Tape<S>& tape, const HeadBankT<S>& bank, const LeafMap<S>& map,
                              int student_cls_aligned, int student_cls_nonaligned, int student_patches_aligned,
                              const std::vector<TeacherTargetsT<S>>& targets, const LossWeights& weights = {}) {
    check(!targets.empty(), Errc::ConfigError, "no teacher targets");
    check(targets.size() == bank.teacher_names.size(), Errc::KeyError, "targets do not cover the head bank");

    LossNodes<S> out;
    out.weights = weights;
    std::vector<std::pair<int, S>> total_terms;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto& tg = targets[t];
        check(tg.name == bank.teacher_names[t], Errc::KeyError,
              "target order mismatch: expected " + bank.teacher_names[t] + ", got " + tg.name);
        for (int m : bank.levels.levels) {
            typename LossNodes<S>::Term term;
            term.teacher = tg.name;
            term.level = m;

            int pc = head_tape_forward(tape, bank, map, student_cls_aligned, tg.name, m, HeadKind::cls);
            term.cls_aligned = tape.cosine_loss_mean(pc, tg.cls_aligned, S(kCosineEps));
            total_terms.push_back({term.cls_aligned, S(weights.w_cls)});

            if (student_cls_nonaligned >= 0) {
                check(tg.cls_nonaligned.size() > 0, Errc::KeyError,
                      "missing non-aligned CLS target for " + tg.name);
                int pn = head_tape_forward(tape, bank, map, student_cls_nonaligned, tg.name, m, HeadKind::cls);
                term.cls_nonaligned = tape.cosine_loss_mean(pn, tg.cls_nonaligned, S(kCosineEps));
                total_terms.push_back({term.cls_nonaligned, S(weights.w_cls)});
            }

            int pp = head_tape_forward(tape, bank, map, student_patches_aligned, tg.name, m, HeadKind::patch);
            term.patch_aligned = tape.mse_loss_mean(pp, tg.patches_aligned_std);
            total_terms.push_back({term.patch_aligned, S(weights.w_patch)});

            out.terms.push_back(std::move(term));
        }
    }
    out.total = tape.sum_scaled(std::move(total_terms));
    return out;
}

template <class S>
LossReport report_from_nodes(const Tape<S>& tape, const LossNodes<S>& nodes) {
    LossReport r;
    for (const auto& term : nodes.terms) {
        const std::string base = term.teacher + "/m" + std::to_string(term.level) + "/";
        double a = double(tape.scalar_val(term.cls_aligned));
        r.cls_aligned += a;
        r.breakdown.push_back({base + "cls_aligned", a});
        if (term.cls_nonaligned >= 0) {
            double n = double(tape.scalar_val(term.cls_nonaligned));
            r.cls_nonaligned += n;
            r.breakdown.push_back({base + "cls_nonaligned", n});
        }
        double p = double(tape.scalar_val(term.patch_aligned));
        r.patch_aligned += p;
        r.breakdown.push_back({base + "patch_aligned", p});
    }
    r.total = nodes.weights.w_cls * (r.cls_aligned + r.cls_nonaligned) + nodes.weights.w_patch * r.patch_aligned;
    return r;
}

}  // namespace pathryoshka
