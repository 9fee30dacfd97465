#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tdyn/tensor.hpp"

namespace tdyn::sim {

// Sensor and physics constants. The tactile array mimics a pressure glove:
// 32x32 sensels sampled at 15 Hz, values normalized to [0,1].
inline constexpr int kSensorDim = 32;
inline constexpr double kFrameRate = 15.0;
inline constexpr double kDt = 1.0 / kFrameRate;
inline constexpr double kGravity = 9.81;
inline constexpr double kNoiseSigma = 0.005;
/// Expected mean of a no-contact frame: E[max(N(0,sigma),0)] = sigma/sqrt(2*pi).
double noise_floor();

/// Pressure scale: cell value = kSensitivity * force * normalized_weight.
inline constexpr double kSensitivity = 3.0;
/// Grip preload on a held object, as a multiple of m*g. Keeps light objects
/// above the contact-detection floor.
inline constexpr double kGripFactor = 2.0;
/// Impulse-to-force factor for catch/bounce frames: F = k * m * |dv| / dt.
inline constexpr double kImpactFactor = 2.0;
/// Directional grating written into the footprint: amplitude and spatial
/// frequency (cycles across the 32-cell array). High-frequency by design so
/// coarse resolutions lose the direction signal.
inline constexpr double kGratingGamma = 0.85;
inline constexpr double kGratingFreq = 5.0;

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
    double norm_xy() const;
};

enum class Activity : std::uint8_t { Wave = 0, Throw = 1, PingPong = 2, Balance = 3 };

Activity activity_from_name(const std::string& name);
std::string activity_name(Activity a);

/// Step labels. Impact marks an impulsive velocity change inside the
/// preceding frame interval; Assist marks the pingpong keep-alive pop-up.
enum class Phase : std::uint8_t { Contact = 0, Flight = 1, Impact = 2, Assist = 3 };

/// Per-object physical description. The footprint is the contact pattern on
/// the palm: a 32x32 weight map, zero outside the contact region.
struct ObjectSpec {
    int id = 0;
    double mass = 0.5;            // kg
    Tensor footprint;             // [32,32], weights in [0.3,1], 0 = inactive
    double restitution = 0.9;     // [0,1]
    Vec3 grip_offset;             // object center relative to palm when held, m

    int active_cells() const;
    void validate() const;
};

struct SystemState {
    Vec3 q_hand, v_hand, q_obj, v_obj;

    std::array<double, 12> flatten() const;
    static SystemState unflatten(const std::array<double, 12>& v);
};
inline constexpr int kStateDim = 12;

struct TactileFrame {
    int h = kSensorDim;
    int w = kSensorDim;
    std::vector<double> v;  // row-major, [0,1]

    TactileFrame() : v(static_cast<std::size_t>(kSensorDim * kSensorDim), 0.0) {}
    TactileFrame(int hh, int ww) : h(hh), w(ww), v(static_cast<std::size_t>(hh * ww), 0.0) {}
    double& at(int r, int c) { return v[static_cast<std::size_t>(r * w + c)]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r * w + c)]; }
    double mean() const;
    double sum() const;
};

/// One recorded interaction. States and frames are sampled at 15 Hz and are
/// co-integrated with per-frame constant acceleration, so for every step k
/// with labels[k+1] < Impact:
///   (q[k+1]-q[k])/dt == (v[k]+v[k+1])/2   (exact up to f64 rounding)
/// which also makes free-flight segments exact parabolas.
struct Episode {
    int object_id = 0;
    Activity activity = Activity::Wave;
    double dt = kDt;
    std::vector<SystemState> states;
    std::vector<TactileFrame> frames;
    std::vector<std::uint8_t> labels;

    std::int64_t size() const { return static_cast<std::int64_t>(states.size()); }
    bool contact_at(std::int64_t t) const {
        return labels[static_cast<std::size_t>(t)] != static_cast<std::uint8_t>(Phase::Flight);
    }
    void validate() const;
};

/// Renders one tactile frame. `torque` is the in-plane pressure-shift
/// direction scaled by intensity (|torque| clamped to 1); it modulates the
/// footprint with a directional grating. Zero force renders the noise floor
/// only. `noise_rng == nullptr` disables sensor noise (test hook).
TactileFrame render_tactile(double total_force, double torque_x, double torque_y,
                            const ObjectSpec& spec, Rng* noise_rng);

struct WaveTuning {
    double accel_scale = 1.0;  // 0 = perfectly stationary hand
};
struct BalanceTuning {
    double disturbance = 0.35;       // lateral kick scale, m/s^2
    double initial_tilt_frac = 0.12; // initial |tip-hand| as fraction of length
};

/// Hand waves along a random smooth path; object rigidly attached.
Episode gen_wave(const ObjectSpec& spec, double duration_s, std::uint64_t seed,
                 const WaveTuning& tuning = {});

/// Repeated throw-and-catch cycles; at least two releases per episode.
Episode gen_throw(const ObjectSpec& spec, double duration_s, std::uint64_t seed);

/// Ball bouncing on a level racket; restitution applies at each bounce.
Episode gen_pingpong(const ObjectSpec& spec, double duration_s, std::uint64_t seed);

struct BalanceResult {
    Episode episode;
    int retries = 0;
};

/// Inverted-pendulum balancing; the PD-controlled hand keeps tilt small.
/// Regenerates with a new derived seed on controller failure (tilt >= 90 deg).
BalanceResult gen_balance(const ObjectSpec& spec, double duration_s, std::uint64_t seed,
                          const BalanceTuning& tuning = {});

Episode generate(Activity a, const ObjectSpec& spec, double duration_s, std::uint64_t seed);

/// Draws n object specs with pairwise-distinct tactile statistics: masses
/// differ by >= 15% or footprints differ in >= 8 cells.
std::vector<ObjectSpec> sample_object_specs(int n, Activity activity, std::uint64_t seed);

/// Copy of `spec` with the footprint translated by (dr, dc) cells and the
/// grip offset displaced to match; emulates changing in-hand position.
ObjectSpec shift_grip(const ObjectSpec& spec, int dr, int dc);

} // namespace tdyn::sim
