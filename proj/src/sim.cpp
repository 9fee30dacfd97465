#include "tdyn/sim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace tdyn::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;
const Vec3 kHandHome{0.0, 0.0, 0.9};

// Episodes scatter their rest pose around the nominal home; this is the
// in-hand/posture variation that makes distinct recordings occupy distinct
// workspace regions.
Vec3 episode_home(Rng& rng) {
    return kHandHome + Vec3{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                            rng.uniform(-0.15, 0.15)};
}

struct Body {
    Vec3 q, v;
};

// Constant-acceleration step over dt: v' = v + a*dt, q' = q + (v+v')/2*dt.
// Positions and velocities stay trapezoid-consistent, and constant-gravity
// segments land exactly on the closed-form parabola.
void step_body(Body& b, const Vec3& a, double dt) {
    const Vec3 v1 = b.v + a * dt;
    b.q += (b.v + v1) * (0.5 * dt);
    b.v = v1;
}

// Position/velocity advanced by tau within a frame (same quadratic model).
Body advance(const Body& b, const Vec3& a, double tau) {
    Body out = b;
    step_body(out, a, tau);
    return out;
}

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

Vec3 clamp_xy(Vec3 a, double limit) {
    const double n = a.norm_xy();
    if (n > limit) {
        a.x *= limit / n;
        a.y *= limit / n;
    }
    return a;
}

// Smallest tau in (0, limit] with dz0 + dv*tau + 0.5*da*tau^2 == 0 and the
// relative velocity at tau negative (approaching from above).
std::optional<double> falling_crossing(double dz0, double dv, double da, double limit) {
    const double a = 0.5 * da, b = dv, c = dz0;
    std::optional<double> best;
    auto consider = [&](double t) {
        if (t <= 1e-12 || t > limit) return;
        if (b + da * t >= 0.0) return;
        if (!best || t < *best) best = t;
    };
    if (std::abs(a) < 1e-12) {
        if (std::abs(b) > 1e-12) consider(-c / b);
        return best;
    }
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    consider((-b - sq) / (2.0 * a));
    consider((-b + sq) / (2.0 * a));
    return best;
}

// Sum of three seeded sinusoids per axis, used as a hand acceleration source.
struct WavePath {
    std::array<double, 9> amp{}, freq{}, phase{};
    double scale = 1.0;

    WavePath(Rng& rng, double accel_cap_xy, double accel_cap_z, double s) : scale(s) {
        for (int i = 0; i < 9; ++i) {
            const int axis = i / 3;
            const double cap = (axis == 2 ? accel_cap_z : accel_cap_xy) / 3.0;
            amp[i] = rng.uniform(0.35, 1.0) * cap;
            freq[i] = rng.uniform(0.25, 1.05);
            phase[i] = rng.uniform(0.0, 2.0 * kPi);
        }
    }

    Vec3 accel(double t) const {
        Vec3 a;
        for (int i = 0; i < 9; ++i) {
            const double v = amp[i] * std::sin(2.0 * kPi * freq[i] * t + phase[i]) * scale;
            if (i / 3 == 0) a.x += v;
            else if (i / 3 == 1) a.y += v;
            else a.z += v;
        }
        return a;
    }
};

Vec3 centering(const Body& b, const Vec3& home, double kq, double kv) {
    return (home - b.q) * kq + b.v * (-kv);
}

// Force magnitude on the glove for a held object: grip preload plus the
// inertial reaction |m*(a - g_vec)|.
double held_force(double mass, const Vec3& a_obj) {
    const Vec3 rel{a_obj.x, a_obj.y, a_obj.z + kGravity};
    return mass * (kGripFactor * kGravity + rel.norm());
}

// In-plane pressure shift for a held object: direction of the lateral
// inertial force, intensity saturating at |a_xy| = 6 m/s^2.
void held_torque(const Vec3& a_obj, double& tx, double& ty) {
    const Vec3 rel{a_obj.x, a_obj.y, 0.0};
    const double n = rel.norm_xy();
    if (n < 1e-9) {
        tx = ty = 0.0;
        return;
    }
    const double intensity = std::min(1.0, n / 6.0);
    tx = rel.x / n * intensity;
    ty = rel.y / n * intensity;
}

struct FrameSource {
    double force = 0.0;
    double tx = 0.0, ty = 0.0;
    Phase phase = Phase::Contact;
};

void push_step(Episode& ep, const ObjectSpec& spec, const SystemState& st, const FrameSource& src,
               Rng& noise) {
    ep.states.push_back(st);
    ep.labels.push_back(static_cast<std::uint8_t>(src.phase));
    ep.frames.push_back(render_tactile(src.force, src.tx, src.ty, spec, &noise));
}

} // namespace

double noise_floor() { return kNoiseSigma / std::sqrt(2.0 * kPi); }

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }
double Vec3::norm_xy() const { return std::sqrt(x * x + y * y); }

Activity activity_from_name(const std::string& name) {
    if (name == "wave") return Activity::Wave;
    if (name == "throw") return Activity::Throw;
    if (name == "pingpong") return Activity::PingPong;
    if (name == "balance") return Activity::Balance;
    throw std::invalid_argument("unknown activity: " + name);
}

std::string activity_name(Activity a) {
    switch (a) {
        case Activity::Wave: return "wave";
        case Activity::Throw: return "throw";
        case Activity::PingPong: return "pingpong";
        case Activity::Balance: return "balance";
    }
    throw std::invalid_argument("bad activity code");
}

int ObjectSpec::active_cells() const {
    int n = 0;
    for (double w : footprint.data) n += (w > 0.0);
    return n;
}

void ObjectSpec::validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("ObjectSpec: mass must be positive");
    if (restitution < 0.0 || restitution > 1.0)
        throw std::invalid_argument("ObjectSpec: restitution outside [0,1]");
    if (footprint.shape != std::vector<std::int64_t>{kSensorDim, kSensorDim})
        throw std::invalid_argument("ObjectSpec: footprint must be 32x32");
    if (active_cells() < 8) throw std::invalid_argument("ObjectSpec: footprint below 8 cells");
}

std::array<double, 12> SystemState::flatten() const {
    return {q_hand.x, q_hand.y, q_hand.z, v_hand.x, v_hand.y, v_hand.z,
            q_obj.x,  q_obj.y,  q_obj.z,  v_obj.x,  v_obj.y,  v_obj.z};
}

SystemState SystemState::unflatten(const std::array<double, 12>& v) {
    SystemState s;
    s.q_hand = {v[0], v[1], v[2]};
    s.v_hand = {v[3], v[4], v[5]};
    s.q_obj = {v[6], v[7], v[8]};
    s.v_obj = {v[9], v[10], v[11]};
    return s;
}

double TactileFrame::mean() const {
    return v.empty() ? 0.0 : sum() / static_cast<double>(v.size());
}

double TactileFrame::sum() const {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

void Episode::validate() const {
    const auto t = size();
    if (t < 60) throw std::runtime_error("episode shorter than 60 steps");
    if (static_cast<std::int64_t>(frames.size()) != t ||
        static_cast<std::int64_t>(labels.size()) != t)
        throw std::runtime_error("episode stream lengths disagree");
    for (const auto& st : states) {
        for (double x : st.flatten()) {
            if (!std::isfinite(x)) throw std::runtime_error("non-finite state in episode");
        }
        if (std::abs(st.q_hand.x) > 5.0 || std::abs(st.q_obj.z) > 5.0 ||
            st.v_hand.norm() > 20.0 || st.v_obj.norm() > 20.0)
            throw std::runtime_error("state outside workspace bounds");
    }
}

TactileFrame render_tactile(double total_force, double torque_x, double torque_y,
                            const ObjectSpec& spec, Rng* noise_rng) {
    if (total_force < 0.0) throw std::invalid_argument("render_tactile: negative force");
    TactileFrame frame;
    double tmag = std::sqrt(torque_x * torque_x + torque_y * torque_y);
    if (tmag > 1.0) {
        torque_x /= tmag;
        torque_y /= tmag;
        tmag = 1.0;
    }
    if (total_force > 0.0) {
        const double ux = tmag > 1e-12 ? torque_x / tmag : 0.0;
        const double uy = tmag > 1e-12 ? torque_y / tmag : 0.0;
        std::vector<double> w(frame.v.size(), 0.0);
        double sum = 0.0;
        for (int r = 0; r < kSensorDim; ++r) {
            for (int c = 0; c < kSensorDim; ++c) {
                const double base = spec.footprint.at3(0, r, c, kSensorDim, kSensorDim);
                if (base <= 0.0) continue;
                double m = 1.0;
                if (tmag > 1e-12) {
                    const double proj = ux * (c - 15.5) + uy * (r - 15.5);
                    m += kGratingGamma * tmag *
                         std::sin(2.0 * kPi * kGratingFreq * proj / kSensorDim + 0.7);
                }
                const double val = base * m;
                w[static_cast<std::size_t>(r * kSensorDim + c)] = val;
                sum += val;
            }
        }
        if (sum > 0.0) {
            const double scale = kSensitivity * total_force / sum;
            for (std::size_t i = 0; i < w.size(); ++i) frame.v[i] = w[i] * scale;
        }
    }
    for (auto& x : frame.v) {
        if (noise_rng) x += noise_rng->normal(0.0, kNoiseSigma);
        x = clamp(x, 0.0, 1.0);
    }
    return frame;
}

Episode gen_wave(const ObjectSpec& spec, double duration_s, std::uint64_t seed,
                 const WaveTuning& tuning) {
    if (duration_s < 4.0) throw std::invalid_argument("gen_wave: duration must be >= 4 s");
    spec.validate();
    Rng rng(mix_seed(seed, 0x7761));
    Rng noise = rng.fork(1);
    const auto steps = static_cast<std::int64_t>(duration_s * kFrameRate);

    WavePath path(rng, 3.2, 2.4, tuning.accel_scale * rng.uniform(0.6, 1.4));
    const Vec3 home = episode_home(rng);
    Body hand{home + Vec3{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0}, {}};

    Episode ep;
    ep.object_id = spec.id;
    ep.activity = Activity::Wave;

    auto make_state = [&](const Body& h) {
        SystemState st;
        st.q_hand = h.q;
        st.v_hand = h.v;
        st.q_obj = h.q + spec.grip_offset;
        st.v_obj = h.v;
        return st;
    };
    auto accel_at = [&](std::int64_t k, const Body& h) {
        Vec3 a = path.accel(k * kDt) + centering(h, home, 1.5, 1.0) * tuning.accel_scale;
        a.x = clamp(a.x, -4.5, 4.5);
        a.y = clamp(a.y, -4.5, 4.5);
        a.z = clamp(a.z, -4.0, 4.0);
        return a;
    };

    FrameSource src;
    src.force = held_force(spec.mass, accel_at(0, hand));
    held_torque(accel_at(0, hand), src.tx, src.ty);
    push_step(ep, spec, make_state(hand), src, noise);

    for (std::int64_t k = 0; k + 1 < steps; ++k) {
        const Vec3 a = accel_at(k, hand);
        step_body(hand, a, kDt);
        src.force = held_force(spec.mass, a);
        held_torque(a, src.tx, src.ty);
        src.phase = Phase::Contact;
        push_step(ep, spec, make_state(hand), src, noise);
    }
    ep.validate();
    return ep;
}

Episode gen_throw(const ObjectSpec& spec, double duration_s, std::uint64_t seed) {
    if (duration_s < 4.0) throw std::invalid_argument("gen_throw: duration must be >= 4 s");
    spec.validate();
    Rng rng(mix_seed(seed, 0x7468));
    Rng noise = rng.fork(1);
    const auto steps = static_cast<std::int64_t>(duration_s * kFrameRate);

    WavePath path(rng, 4.0, 2.4, rng.uniform(0.6, 1.4));
    const Vec3 home = episode_home(rng);
    const double release_lo = rng.uniform(2.2, 3.2);
    const double release_hi = release_lo + 1.0;
    Body hand{home, {}};
    Body obj{hand.q + spec.grip_offset, {}};
    Vec3 grip = spec.grip_offset;

    enum class Mode { Hold, Ramp, Flight };
    Mode mode = Mode::Hold;
    std::int64_t mode_left = 5 + rng.index(16);  // first hold widely varied
    double ramp_accel = 0.0;

    Episode ep;
    ep.object_id = spec.id;
    ep.activity = Activity::Throw;

    auto hand_hold_accel = [&](std::int64_t k) {
        Vec3 a = path.accel(k * kDt) + centering(hand, home, 2.0, 1.6);
        a.x = clamp(a.x, -4.5, 4.5);
        a.y = clamp(a.y, -4.5, 4.5);
        a.z = clamp(a.z, -3.0, 3.0);
        return a;
    };

    auto state_now = [&]() {
        SystemState st;
        st.q_hand = hand.q;
        st.v_hand = hand.v;
        st.q_obj = obj.q;
        st.v_obj = obj.v;
        return st;
    };

    FrameSource src;
    {
        const Vec3 a0 = hand_hold_accel(0);
        src.force = held_force(spec.mass, a0);
        held_torque(a0, src.tx, src.ty);
    }
    push_step(ep, spec, state_now(), src, noise);

    for (std::int64_t k = 0; k + 1 < steps; ++k) {
        FrameSource next;
        if (mode == Mode::Hold || mode == Mode::Ramp) {
            Vec3 a = hand_hold_accel(k);
            if (mode == Mode::Ramp) a.z = ramp_accel;
            step_body(hand, a, kDt);
            obj.q = hand.q + grip;
            obj.v = hand.v;
            next.force = held_force(spec.mass, a);
            held_torque(a, next.tx, next.ty);
            next.phase = Phase::Contact;
            if (--mode_left <= 0) {
                if (mode == Mode::Hold) {
                    mode = Mode::Ramp;
                    mode_left = 5;
                    const double target = rng.uniform(release_lo, release_hi);
                    ramp_accel = (target - hand.v.z) / (5.0 * kDt);
                } else {
                    mode = Mode::Flight;  // release at this frame boundary
                }
            }
        } else {
            // Object ballistic; hand brakes and tracks the ball in xy.
            const Vec3 a_obj{0.0, 0.0, -kGravity};
            Vec3 a_hand = clamp_xy({20.0 * (obj.q.x - hand.q.x) + 8.0 * (obj.v.x - hand.v.x),
                                    20.0 * (obj.q.y - hand.q.y) + 8.0 * (obj.v.y - hand.v.y), 0.0},
                                   9.0);
            a_hand.z = clamp(-12.0 * (hand.q.z - home.z) - 7.0 * hand.v.z, -10.0, 10.0);

            const double dz0 = obj.q.z - (hand.q.z + grip.z);
            const double dvz = obj.v.z - hand.v.z;
            const double daz = -kGravity - a_hand.z;
            const auto tau = falling_crossing(dz0, dvz, daz, kDt);
            bool caught = false;
            if (tau) {
                const Body hand_c = advance(hand, a_hand, *tau);
                const Body obj_c = advance(obj, a_obj, *tau);
                const double xy_err = (obj_c.q - hand_c.q).norm_xy();
                if (xy_err <= 0.35) {
                    const double dv = (hand_c.v - obj_c.v).norm();
                    grip = obj_c.q - hand_c.q;
                    step_body(hand, a_hand, kDt);  // hand motion is not impulsive
                    obj.q = hand.q + grip;
                    obj.v = hand.v;
                    next.force = kImpactFactor * spec.mass * dv / kDt +
                                 held_force(spec.mass, a_hand);
                    held_torque(a_hand, next.tx, next.ty);
                    next.phase = Phase::Impact;
                    mode = Mode::Hold;
                    mode_left = 7 + rng.index(10);
                    caught = true;
                }
            }
            if (!caught) {
                step_body(hand, a_hand, kDt);
                step_body(obj, a_obj, kDt);
                if (obj.q.z - (hand.q.z + grip.z) < -0.6) {
                    // Missed catch; reattach at the current offset.
                    const double dv = (hand.v - obj.v).norm();
                    grip = obj.q - hand.q;
                    grip.z = spec.grip_offset.z;
                    obj.q = hand.q + grip;
                    obj.v = hand.v;
                    next.force = kImpactFactor * spec.mass * dv / kDt;
                    next.phase = Phase::Impact;
                    mode = Mode::Hold;
                    mode_left = 7 + rng.index(10);
                } else {
                    next.force = 0.0;
                    next.phase = Phase::Flight;
                }
            }
        }
        push_step(ep, spec, state_now(), next, noise);
    }
    ep.validate();
    return ep;
}

Episode gen_pingpong(const ObjectSpec& spec, double duration_s, std::uint64_t seed) {
    if (duration_s < 4.0) throw std::invalid_argument("gen_pingpong: duration must be >= 4 s");
    spec.validate();
    Rng rng(mix_seed(seed, 0x7070));
    Rng noise = rng.fork(1);
    const auto steps = static_cast<std::int64_t>(duration_s * kFrameRate);

    const Vec3 home = episode_home(rng) + Vec3{0.0, 0.0, -0.05};
    Body hand{home, {}};
    Body ball{{home.x + rng.uniform(-0.03, 0.03), home.y + rng.uniform(-0.03, 0.03),
               home.z + rng.uniform(0.45, 0.65)},
              {}};
    WavePath path(rng, 1.2, 0.0, 1.0);

    Episode ep;
    ep.object_id = spec.id;
    ep.activity = Activity::PingPong;

    auto state_now = [&]() {
        SystemState st;
        st.q_hand = hand.q;
        st.v_hand = hand.v;
        st.q_obj = ball.q;
        st.v_obj = ball.v;
        return st;
    };

    FrameSource src;
    src.phase = Phase::Flight;
    push_step(ep, spec, state_now(), src, noise);

    for (std::int64_t k = 0; k + 1 < steps; ++k) {
        Vec3 a_hand = path.accel(k * kDt) + centering(hand, home, 2.5, 1.8);
        a_hand = clamp_xy(a_hand, 2.0);
        a_hand.z = 0.0;  // level racket plane

        FrameSource next;
        next.phase = Phase::Flight;

        double remaining = kDt;
        Body b = ball;
        while (remaining > 1e-12) {
            const auto tau = falling_crossing(b.q.z - home.z, b.v.z, -kGravity, remaining);
            if (!tau) {
                step_body(b, {0.0, 0.0, -kGravity}, remaining);
                remaining = 0.0;
                break;
            }
            b = advance(b, {0.0, 0.0, -kGravity}, *tau);
            remaining -= *tau;
            const double v_in = b.v.z;  // < 0
            double v_out;
            if (-v_in >= 1.2) {
                v_out = -spec.restitution * v_in;
                next.phase = Phase::Impact;
            } else {
                v_out = std::sqrt(2.0 * kGravity * rng.uniform(0.40, 0.60));
                next.phase = Phase::Assist;
            }
            next.force += kImpactFactor * spec.mass * (v_out - v_in) / kDt;
            b.q.z = home.z;
            b.v.z = v_out;
        }
        ball = b;
        step_body(hand, a_hand, kDt);
        push_step(ep, spec, state_now(), next, noise);
    }
    ep.validate();
    return ep;
}

BalanceResult gen_balance(const ObjectSpec& spec, double duration_s, std::uint64_t seed,
                          const BalanceTuning& tuning) {
    if (duration_s < 4.0) throw std::invalid_argument("gen_balance: duration must be >= 4 s");
    spec.validate();
    const double len = clamp(0.45 + 0.25 * spec.mass, 0.45, 1.0);
    const auto steps = static_cast<std::int64_t>(duration_s * kFrameRate);

    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng(mix_seed(seed, 0x6261 + static_cast<std::uint64_t>(attempt)));
        Rng noise = rng.fork(1);

        const Vec3 home = episode_home(rng);
        Body hand{home, {}};
        const double tilt0 = tuning.initial_tilt_frac * len;
        const double dir0 = rng.uniform(0.0, 2.0 * kPi);
        Body tip{{hand.q.x + tilt0 * std::cos(dir0), hand.q.y + tilt0 * std::sin(dir0),
                  hand.q.z + std::sqrt(len * len - tilt0 * tilt0)},
                 {}};

        Episode ep;
        ep.object_id = spec.id;
        ep.activity = Activity::Balance;

        auto state_now = [&]() {
            SystemState st;
            st.q_hand = hand.q;
            st.v_hand = hand.v;
            st.q_obj = tip.q;
            st.v_obj = tip.v;
            return st;
        };

        const double kp = 4.0 * kGravity / len;
        const double kd = 1.6 * std::sqrt(3.0 * kGravity / len);
        const double sin25 = std::sin(25.0 * kPi / 180.0);

        auto accels = [&](Vec3& a_tip, Vec3& a_hand, const Vec3& dist) {
            const Vec3 u{tip.q.x - hand.q.x, tip.q.y - hand.q.y, 0.0};
            const Vec3 du{tip.v.x - hand.v.x, tip.v.y - hand.v.y, 0.0};
            a_tip = u * (kGravity / len) + dist;
            a_tip = clamp_xy(a_tip, 6.0);
            const double h_target =
                hand.q.z + std::sqrt(std::max(len * len - u.dot(u), 0.06 * len * len));
            a_tip.z = clamp(-60.0 * (tip.q.z - h_target) - 12.0 * tip.v.z, -8.0, 8.0);
            a_hand = u * kp + du * kd + centering(hand, home, 0.4, 0.8);
            a_hand = clamp_xy(a_hand, 12.0);
            a_hand.z = 0.0;
        };

        auto frame_source = [&](const Vec3& a_tip) {
            FrameSource s;
            s.force = held_force(spec.mass, a_tip);
            const Vec3 u{tip.q.x - hand.q.x, tip.q.y - hand.q.y, 0.0};
            const double n = u.norm_xy();
            if (n > 1e-9) {
                const double intensity = std::min(1.0, n / (len * sin25));
                s.tx = u.x / n * intensity;
                s.ty = u.y / n * intensity;
            }
            return s;
        };

        bool failed = false;
        {
            Vec3 a_tip, a_hand;
            accels(a_tip, a_hand, {});
            push_step(ep, spec, state_now(), frame_source(a_tip), noise);
        }
        for (std::int64_t k = 0; k + 1 < steps; ++k) {
            const Vec3 dist{clamp(rng.normal(0.0, tuning.disturbance), -1.0, 1.0),
                            clamp(rng.normal(0.0, tuning.disturbance), -1.0, 1.0), 0.0};
            Vec3 a_tip, a_hand;
            accels(a_tip, a_hand, dist);
            step_body(tip, a_tip, kDt);
            step_body(hand, a_hand, kDt);
            const Vec3 u = tip.q - hand.q;
            if (u.norm_xy() >= len || u.z <= 0.0) {
                failed = true;
                break;
            }
            push_step(ep, spec, state_now(), frame_source(a_tip), noise);
        }
        if (failed) continue;
        ep.validate();
        return {std::move(ep), attempt};
    }
    throw std::runtime_error("gen_balance: controller failed for every retry seed");
}

Episode generate(Activity a, const ObjectSpec& spec, double duration_s, std::uint64_t seed) {
    switch (a) {
        case Activity::Wave: return gen_wave(spec, duration_s, seed);
        case Activity::Throw: return gen_throw(spec, duration_s, seed);
        case Activity::PingPong: return gen_pingpong(spec, duration_s, seed);
        case Activity::Balance: return gen_balance(spec, duration_s, seed).episode;
    }
    throw std::invalid_argument("bad activity code");
}

namespace {

Tensor random_footprint(Rng& rng) {
    Tensor fp({kSensorDim, kSensorDim});
    const int target = 40 + static_cast<int>(rng.index(81));
    const int cr = 13 + static_cast<int>(rng.index(6));
    const int cc = 13 + static_cast<int>(rng.index(6));
    // Random connected blob grown from the center; margin keeps +-3 cell
    // grip shifts inside the array.
    std::vector<std::pair<int, int>> cells{{cr, cc}};
    std::vector<std::pair<int, int>> frontier;
    auto in_bounds = [](int r, int c) { return r >= 4 && r <= 27 && c >= 4 && c <= 27; };
    auto occupied = [&](int r, int c) {
        for (auto& [rr, cc2] : cells)
            if (rr == r && cc2 == c) return true;
        return false;
    };
    auto add_frontier = [&](int r, int c) {
        const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
        for (int i = 0; i < 4; ++i) {
            const int nr = r + dr[i], nc = c + dc[i];
            if (in_bounds(nr, nc) && !occupied(nr, nc)) frontier.emplace_back(nr, nc);
        }
    };
    add_frontier(cr, cc);
    while (static_cast<int>(cells.size()) < target && !frontier.empty()) {
        const auto pick = rng.index(static_cast<std::int64_t>(frontier.size()));
        const auto [r, c] = frontier[static_cast<std::size_t>(pick)];
        frontier.erase(frontier.begin() + pick);
        if (occupied(r, c)) continue;
        cells.emplace_back(r, c);
        add_frontier(r, c);
    }
    for (auto& [r, c] : cells) {
        fp.at3(0, r, c, kSensorDim, kSensorDim) = rng.uniform(0.3, 1.0);
    }
    return fp;
}

int footprint_diff(const Tensor& a, const Tensor& b) {
    int n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        n += ((a.data[i] > 0.0) != (b.data[i] > 0.0));
    }
    return n;
}

} // namespace

std::vector<ObjectSpec> sample_object_specs(int n, Activity activity, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6f626a));
    std::vector<ObjectSpec> specs;
    for (int i = 0; i < n; ++i) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            ObjectSpec s;
            s.id = i;
            if (activity == Activity::PingPong) {
                s.mass = std::exp(rng.uniform(std::log(0.1), std::log(0.3)));
                s.restitution = rng.uniform(0.92, 0.97);
            } else {
                s.mass = std::exp(rng.uniform(std::log(0.2), std::log(2.0)));
                s.restitution = rng.uniform(0.3, 0.9);
            }
            s.grip_offset = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                             rng.uniform(0.02, 0.08)};
            s.footprint = random_footprint(rng);
            bool ok = true;
            for (const auto& other : specs) {
                const double ratio = std::max(s.mass, other.mass) / std::min(s.mass, other.mass);
                if (ratio < 1.15 && footprint_diff(s.footprint, other.footprint) < 8) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                s.validate();
                specs.push_back(std::move(s));
                break;
            }
        }
        if (static_cast<int>(specs.size()) != i + 1) {
            throw std::runtime_error("sample_object_specs: could not draw distinct specs");
        }
    }
    return specs;
}

ObjectSpec shift_grip(const ObjectSpec& spec, int dr, int dc) {
    ObjectSpec out = spec;
    out.footprint = Tensor({kSensorDim, kSensorDim});
    for (int r = 0; r < kSensorDim; ++r) {
        for (int c = 0; c < kSensorDim; ++c) {
            const double w = spec.footprint.at3(0, r, c, kSensorDim, kSensorDim);
            if (w <= 0.0) continue;
            const int nr = r + dr, nc = c + dc;
            if (nr < 0 || nr >= kSensorDim || nc < 0 || nc >= kSensorDim) continue;
            out.footprint.at3(0, nr, nc, kSensorDim, kSensorDim) = w;
        }
    }
    // 1 cell ~ 1 cm of palm; nudge the grip point to match the new pattern.
    out.grip_offset.x += 0.01 * dc;
    out.grip_offset.y += 0.01 * dr;
    return out;
}

} // namespace tdyn::sim
