#include "sfkd/vehicle_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sfkd/csv.hpp"

namespace sfkd {

VehicleState step_bicycle(const VehicleState& x, const ControlInput& u, const EnvInput& e,
                          double dt, const SimParams& p) {
    if (!is_finite(x) || !is_finite(u) || !is_finite(e))
        throw std::invalid_argument("step_bicycle: non-finite input");
    if (!(dt > 0.0)) throw std::invalid_argument("step_bicycle: dt must be positive");

    const double grip = std::min(1.0, e.mu / p.mu_ref);
    const double delta_eff = u.delta * grip;
    const double a_eff = u.a * grip;

    VehicleState n;
    n.px = x.px + dt * x.v * std::cos(x.psi);
    n.py = x.py + dt * (x.v * std::sin(x.psi) + p.k_wind * e.w);
    n.psi = wrap_angle(x.psi + dt * (x.v / p.wheelbase) * std::tan(delta_eff));
    n.v = std::max(0.0, x.v + dt * a_eff);
    return n;
}

std::string to_string(ScenarioId id) {
    switch (id) {
        case ScenarioId::S1: return "S1";
        case ScenarioId::S2: return "S2";
        case ScenarioId::S3: return "S3";
    }
    return "?";
}

ScenarioId scenario_from_string(const std::string& name) {
    if (name == "S1" || name == "s1") return ScenarioId::S1;
    if (name == "S2" || name == "s2") return ScenarioId::S2;
    if (name == "S3" || name == "s3") return ScenarioId::S3;
    throw std::invalid_argument("unknown scenario: " + name);
}

Scenario make_scenario(ScenarioId id, double duration) {
    Scenario s;
    s.id = id;
    s.duration = duration;
    const EnvInput dry{0.9, 0.0};
    switch (id) {
        case ScenarioId::S1:
            s.switch_times = {0.0};
            s.envs = {dry};
            break;
        case ScenarioId::S2: {
            // wet road: friction drops abruptly at t = 5 s (once); the wind
            // alternates between two gust levels afterwards so the two
            // environment axes decorrelate across the episode
            s.switch_times.push_back(0.0);
            s.envs.push_back(EnvInput{0.55, 3.0});
            s.switch_times.push_back(5.0);
            s.envs.push_back(EnvInput{0.35, 6.0});
            double t = 15.0;
            int i = 0;
            while (t < duration) {
                s.switch_times.push_back(t);
                s.envs.push_back(EnvInput{0.35, i % 2 == 0 ? 2.0 : 6.0});
                t += 10.0;
                ++i;
            }
            break;
        }
        case ScenarioId::S3: {
            // cycle A,B,C,B repeating every 3 s: bands A B C B A B C B ...
            const EnvInput a{0.9, 0.0}, b{0.5, 4.0}, c{0.3, 8.0};
            const EnvInput cycle[4] = {a, b, c, b};
            double t = 0.0;
            int i = 0;
            while (t < duration) {
                s.switch_times.push_back(t);
                s.envs.push_back(cycle[i % 4]);
                t += 3.0;
                ++i;
            }
            break;
        }
    }
    return s;
}

EnvInput scenario_env(const Scenario& s, double t) {
    if (!std::isfinite(t) || t < 0.0 || t > s.duration)
        throw std::out_of_range("scenario_env: t outside [0, duration]");
    // right-continuous: the last switch time <= t wins
    std::size_t idx = 0;
    for (std::size_t i = 0; i < s.switch_times.size(); ++i) {
        if (s.switch_times[i] <= t) idx = i;
    }
    return s.envs[idx];
}

VehicleState reference_state(const PathConfig& path, double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("reference_state: non-finite t");
    const double omega = 2.0 * M_PI / path.period;
    VehicleState r;
    r.px = path.speed * t;
    r.py = path.amplitude * std::sin(omega * t);
    const double dx = path.speed;
    const double dy = path.amplitude * omega * std::cos(omega * t);
    r.psi = std::atan2(dy, dx);
    r.v = std::hypot(dx, dy);
    return r;
}

double lateral_offset(const VehicleState& x, const VehicleState& ref) {
    return -std::sin(ref.psi) * (x.px - ref.px) + std::cos(ref.psi) * (x.py - ref.py);
}

Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    if (cfg.segments <= 0 || cfg.segment_length <= 0)
        throw std::invalid_argument("generate_dataset: segments and segment_length must be positive");
    if (cfg.scenario_mix.empty())
        throw std::invalid_argument("generate_dataset: empty scenario mix");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> uniform01(0.0, 1.0);

    // first-order low-pass on uniform noise keeps the excitation smooth
    const double alpha = 1.0 - std::exp(-2.0 * M_PI * cfg.excitation_cutoff_hz * cfg.dt);

    Dataset d;
    d.dt = cfg.dt;
    d.segments.reserve(cfg.segments);

    for (int si = 0; si < cfg.segments; ++si) {
        const ScenarioId sid = cfg.scenario_mix[si % cfg.scenario_mix.size()];
        const Scenario sc = make_scenario(sid);
        const double span = cfg.segment_length * cfg.dt;
        const double t0 = uniform01(rng) * std::max(0.0, sc.duration - span);
        const double mode = uniform01(rng);
        const bool corridor = mode < cfg.corridor_fraction;
        const bool arc = !corridor && mode < cfg.corridor_fraction + cfg.arc_fraction;

        VehicleState x;
        x.px = unit(rng) * cfg.init_pos_range;
        x.py = unit(rng) * cfg.init_pos_range;
        if (corridor || arc) {
            x.psi = unit(rng) * cfg.corridor_heading;
            x.v = cfg.corridor_v_min + uniform01(rng) * (cfg.corridor_v_max - cfg.corridor_v_min);
        } else {
            x.psi = wrap_angle(unit(rng) * M_PI);
            x.v = cfg.v_min + uniform01(rng) * (cfg.v_max - cfg.v_min);
        }

        const double steer_scale =
            corridor ? cfg.corridor_steer_scale : (arc ? cfg.arc_steer_scale : 1.0);
        const double steer_cutoff =
            corridor ? cfg.corridor_cutoff_hz : (arc ? cfg.arc_cutoff_hz : cfg.excitation_cutoff_hz);
        const double alpha_steer = 1.0 - std::exp(-2.0 * M_PI * steer_cutoff * cfg.dt);
        double s_delta = arc ? unit(rng) : 0.0;  // arcs hold a turn from step one
        double s_a = 0.0;
        Segment seg;
        seg.tuples.reserve(cfg.segment_length);
        for (int k = 0; k < cfg.segment_length; ++k) {
            s_delta += alpha_steer * (unit(rng) - s_delta);
            s_a += alpha * (unit(rng) - s_a);
            ControlInput u{s_delta * steer_scale * cfg.sim.delta_max, s_a * cfg.sim.a_max};
            const EnvInput e = scenario_env(sc, t0 + k * cfg.dt);
            const VehicleState xn = step_bicycle(x, u, e, cfg.dt, cfg.sim);
            seg.tuples.push_back({x, u, e, xn});
            x = xn;
        }
        d.segments.push_back(std::move(seg));
    }
    return d;
}

std::size_t dataset_tuple_count(const Dataset& d) {
    std::size_t n = 0;
    for (const auto& s : d.segments) n += s.tuples.size();
    return n;
}

void save_dataset_csv(const Dataset& d, const std::string& path) {
    CsvWriter w(path);
    w.comment("dt=" + fmt_double(d.dt));
    w.header({"segment_id", "k", "px", "py", "psi", "v", "delta", "a", "mu", "w",
              "px_next", "py_next", "psi_next", "v_next"});
    for (std::size_t si = 0; si < d.segments.size(); ++si) {
        const auto& seg = d.segments[si];
        for (std::size_t k = 0; k < seg.tuples.size(); ++k) {
            const auto& t = seg.tuples[k];
            w.row({std::to_string(si), std::to_string(k), fmt_double(t.x.px), fmt_double(t.x.py),
                   fmt_double(t.x.psi), fmt_double(t.x.v), fmt_double(t.u.delta), fmt_double(t.u.a),
                   fmt_double(t.e.mu), fmt_double(t.e.w), fmt_double(t.x_next.px),
                   fmt_double(t.x_next.py), fmt_double(t.x_next.psi), fmt_double(t.x_next.v)});
        }
    }
    w.close();
}

Dataset load_dataset_csv(const std::string& path) {
    // the dt comment precedes the header; recover it first
    Dataset d;
    {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("# dt=", 0) == 0) {
                d.dt = parse_double(line.substr(5));
                break;
            }
            if (!line.empty() && line[0] != '#') break;
        }
    }
    CsvTable t = read_csv(path);
    const int c_seg = t.col("segment_id"), c_k = t.col("k");
    const int c[12] = {t.col("px"),      t.col("py"),      t.col("psi"),     t.col("v"),
                       t.col("delta"),   t.col("a"),       t.col("mu"),      t.col("w"),
                       t.col("px_next"), t.col("py_next"), t.col("psi_next"), t.col("v_next")};
    long prev_seg = -1;
    for (const auto& row : t.rows) {
        const long seg_id = parse_long(row[c_seg]);
        const long k = parse_long(row[c_k]);
        if (seg_id != prev_seg) {
            if (seg_id != prev_seg + 1 || k != 0)
                throw std::runtime_error("dataset CSV: segments out of order");
            d.segments.emplace_back();
            prev_seg = seg_id;
        }
        DatasetTuple tup;
        tup.x = {parse_double(row[c[0]]), parse_double(row[c[1]]), parse_double(row[c[2]]),
                 parse_double(row[c[3]])};
        tup.u = {parse_double(row[c[4]]), parse_double(row[c[5]])};
        tup.e = {parse_double(row[c[6]]), parse_double(row[c[7]])};
        tup.x_next = {parse_double(row[c[8]]), parse_double(row[c[9]]), parse_double(row[c[10]]),
                      parse_double(row[c[11]])};
        d.segments.back().tuples.push_back(tup);
    }
    return d;
}

}  // namespace sfkd
