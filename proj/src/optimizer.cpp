#include "selfsim/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "selfsim/error.hpp"

namespace selfsim {

void LbfgsConfig::validate() const {
    if (memory < 1)
        throw ConfigError("lbfgs.memory", "must be at least 1");
    if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0))
        throw ConfigError("lbfgs.c1", "need 0 < c1 < c2 < 1");
    if (max_iterations < 0)
        throw ConfigError("lbfgs.max_iterations", "must be nonnegative");
    if (!(gradient_tolerance >= 0.0) || !std::isfinite(gradient_tolerance))
        throw ConfigError("lbfgs.gradient_tolerance", "must be finite and nonnegative");
    if (max_line_search_steps < 1)
        throw ConfigError("lbfgs.max_line_search_steps", "must be at least 1");
    if (warmup_iterations < 0)
        throw ConfigError("lbfgs.warmup_iterations", "must be nonnegative");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct Point {
    double alpha = 0.0;
    double f = 0.0;
    double slope = 0.0;
    std::vector<double> x;
    std::vector<double> g;
};

class LineSearch {
  public:
    LineSearch(const Objective &obj, const LbfgsConfig &cfg, int &evals)
        : obj_(obj), cfg_(cfg), evals_(evals) {}

    /// Strong-Wolfe search along d from (x0, f0, slope0 < 0). Returns false on
    /// failure; on success `out` holds the accepted point, which is always the
    /// most recent evaluation.
    bool search(const std::vector<double> &x0, double f0, double slope0, const std::vector<double> &d,
                double alpha0, Point &out) {
        x0_ = &x0;
        d_ = &d;
        f0_ = f0;
        slope0_ = slope0;
        budget_ = cfg_.max_line_search_steps;

        Point prev{0.0, f0, slope0, {}, {}};
        double alpha = alpha0;
        for (int i = 0; budget_ > 0; ++i) {
            Point cur = eval(alpha);
            if (cur.f > f0 + cfg_.c1 * alpha * slope0 || (i > 0 && cur.f >= prev.f))
                return zoom(prev, cur, out);
            if (std::abs(cur.slope) <= -cfg_.c2 * slope0) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope >= 0.0)
                return zoom(cur, prev, out);
            prev = std::move(cur);
            alpha *= 2.0;
            if (!std::isfinite(alpha))
                return false;
        }
        return false;
    }

  private:
    Point eval(double alpha) {
        --budget_;
        ++evals_;
        Point p;
        p.alpha = alpha;
        p.x.resize(x0_->size());
        for (std::size_t i = 0; i < p.x.size(); ++i)
            p.x[i] = (*x0_)[i] + alpha * (*d_)[i];
        try {
            p.f = obj_(p.x, p.g);
            p.slope = dot(p.g, *d_);
        } catch (const NonFiniteError &) {
            p.f = std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(p.f) || !std::isfinite(p.slope)) {
            p.f = std::numeric_limits<double>::infinity();
            p.slope = std::numeric_limits<double>::quiet_NaN();
        }
        return p;
    }

    // Cubic interpolation minimiser between lo and hi, safeguarded.
    static double interpolate(const Point &lo, const Point &hi) {
        const double a = lo.alpha, b = hi.alpha;
        const double width = std::abs(b - a);
        double t = 0.5 * (a + b);
        if (std::isfinite(hi.f) && std::isfinite(hi.slope)) {
            const double d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
            const double disc = d1 * d1 - lo.slope * hi.slope;
            if (disc >= 0.0) {
                const double d2 = std::copysign(std::sqrt(disc), b - a);
                const double c = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
                if (std::isfinite(c))
                    t = c;
            }
        }
        const double lo_b = std::min(a, b) + 0.1 * width;
        const double hi_b = std::max(a, b) - 0.1 * width;
        if (t < lo_b || t > hi_b)
            t = 0.5 * (a + b);
        return t;
    }

    bool zoom(Point lo, Point hi, Point &out) {
        while (budget_ > 0) {
            const double alpha = interpolate(lo, hi);
            if (alpha == lo.alpha || alpha == hi.alpha)
                return false;
            Point cur = eval(alpha);
            if (cur.f > f0_ + cfg_.c1 * alpha * slope0_ || cur.f >= lo.f) {
                hi = std::move(cur);
            } else {
                if (std::abs(cur.slope) <= -cfg_.c2 * slope0_) {
                    out = std::move(cur);
                    return true;
                }
                if (cur.slope * (hi.alpha - lo.alpha) >= 0.0)
                    hi = std::move(lo);
                lo = std::move(cur);
            }
        }
        return false;
    }

    const Objective &obj_;
    const LbfgsConfig &cfg_;
    int &evals_;
    const std::vector<double> *x0_ = nullptr;
    const std::vector<double> *d_ = nullptr;
    double f0_ = 0.0;
    double slope0_ = 0.0;
    int budget_ = 0;
};

} // namespace

MinimizeResult minimize(const Objective &objective, std::vector<double> x0, const LbfgsConfig &config,
                        const std::function<LossBreakdown()> &breakdown, const IterationCallback &on_iteration) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    MinimizeResult res;
    TrainHistory &h = res.history;
    auto record = [&](double f, double gnorm, double step) {
        LossBreakdown lb;
        if (breakdown)
            lb = breakdown();
        else
            lb.total = f;
        h.losses.push_back(lb);
        h.grad_norms.push_back(gnorm);
        h.steps.push_back(step);
        h.seconds.push_back(elapsed());
        if (on_iteration)
            on_iteration(h);
    };

    std::vector<double> x = std::move(x0);
    std::vector<double> g;
    double f = objective(x, g);
    h.evaluations = 1;
    if (!std::isfinite(f))
        throw NonFiniteError("minimize: objective is not finite at the starting point");
    double gnorm = norm(g);
    record(f, gnorm, 0.0);
    res.x = x;
    res.f = f;

    std::deque<std::vector<double>> S, Y;
    std::deque<double> rho;
    LineSearch ls(objective, config, h.evaluations);
    std::vector<double> d(x.size());
    std::vector<double> alpha_buf;

    for (int iter = 0;; ++iter) {
        if (gnorm <= config.gradient_tolerance) {
            h.stop_reason = "gradient_tolerance";
            break;
        }
        if (iter >= config.max_iterations) {
            h.stop_reason = "max_iterations";
            break;
        }

        // Two-loop recursion.
        for (std::size_t i = 0; i < x.size(); ++i)
            d[i] = -g[i];
        const std::size_t m = S.size();
        alpha_buf.assign(m, 0.0);
        for (std::size_t k = m; k-- > 0;) {
            alpha_buf[k] = rho[k] * dot(S[k], d);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] -= alpha_buf[k] * Y[k][i];
        }
        if (m > 0) {
            const double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
            for (double &v : d)
                v *= gamma;
        }
        for (std::size_t k = 0; k < m; ++k) {
            const double beta = rho[k] * dot(Y[k], d);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += S[k][i] * (alpha_buf[k] - beta);
        }
        double slope = dot(g, d);
        if (!(slope < 0.0)) {
            // Not a descent direction: restart from steepest descent.
            S.clear();
            Y.clear();
            rho.clear();
            for (std::size_t i = 0; i < x.size(); ++i)
                d[i] = -g[i];
            slope = -gnorm * gnorm;
        }
        const double alpha0 = S.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;

        Point next;
        if (!ls.search(x, f, slope, d, alpha0, next)) {
            h.line_search_failed = true;
            h.stop_reason = "line_search_failed";
            break;
        }

        std::vector<double> s(x.size()), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            s[i] = next.x[i] - x[i];
            y[i] = next.g[i] - g[i];
        }
        const double sy = dot(s, y);
        h.wolfe.push_back({f, next.f, slope, next.slope, next.alpha});
        x = std::move(next.x);
        g = std::move(next.g);
        f = next.f;
        gnorm = norm(g);
        if (sy > 1e-12 * norm(s) * norm(y)) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > config.memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        record(f, gnorm, next.alpha);
        if (f < res.f) {
            res.f = f;
            res.x = x;
        }
    }
    return res;
}

MinimizeResult warmup(const ProblemSpec &problem, const Networks &nets, const CollocationSet &collocation,
                      const LbfgsConfig &config, const IterationCallback &on_iteration) {
    LbfgsConfig cfg = config;
    cfg.max_iterations = config.warmup_iterations;
    const auto p0 = nets.profile_params();
    Objective obj = [&](std::span<const double> p, std::vector<double> &g) {
        return warmup_loss(problem, nets.profile, p, collocation, &g);
    };
    return minimize(obj, std::vector<double>(p0.begin(), p0.end()), cfg, {}, on_iteration);
}

TrainResult train(const ProblemSpec &problem, const CollocationSet &collocation, const LossWeights &weights,
                  const LbfgsConfig &config, Networks initial, const IterationCallback &on_warmup,
                  const IterationCallback &on_iteration) {
    config.validate();
    weights.validate();
    initial.check_compatible(problem);
    TrainResult out;
    out.nets = std::move(initial);

    if (config.warmup_iterations > 0) {
        MinimizeResult w = warmup(problem, out.nets, collocation, config, on_warmup);
        std::copy(w.x.begin(), w.x.end(), out.nets.params.begin());
        out.warmup = std::move(w.history);
    }

    Networks scratch = out.nets;
    LossBreakdown last;
    Objective obj = [&](std::span<const double> p, std::vector<double> &g) {
        std::copy(p.begin(), p.end(), scratch.params.begin());
        last = total_loss(problem, scratch, collocation, weights, &g);
        return last.total;
    };
    MinimizeResult r = minimize(obj, out.nets.params, config, [&] { return last; }, on_iteration);
    out.nets.params = std::move(r.x);
    out.history = std::move(r.history);
    return out;
}

} // namespace selfsim
