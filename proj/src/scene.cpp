#include "renderflow/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

namespace rf {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kShadowEps = 1e-4;
constexpr double kTFar = 1e3;        // scene bound for primary and shadow rays
constexpr double kAlphaMin = 0.04;   // GGX alpha floor, keeps the lobe resolvable

struct Material {
    Vec3 albedo;
    double roughness, metallic, specular;
};

struct Hit {
    bool hit = false;
    double t = std::numeric_limits<double>::infinity();
    Vec3 pos, normal;
    Material mat;
};

bool hit_sphere(Vec3 center, double radius, Vec3 o, Vec3 d, double tmin, double tmax, double& t_out,
                Vec3& n_out) {
    Vec3 oc = o - center;
    double b = dot(oc, d);
    double c = dot(oc, oc) - radius * radius;
    double disc = b * b - c;
    if (disc < 0.0) return false;
    double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < tmin) t = -b + sq;
    if (t < tmin || t > tmax) return false;
    t_out = t;
    n_out = normalize(o + d * t - center);
    return true;
}

bool hit_box(Vec3 center, double half, Vec3 o, Vec3 d, double tmin, double tmax, double& t_out,
             Vec3& n_out) {
    Vec3 lo = center - Vec3{half, half, half};
    Vec3 hi = center + Vec3{half, half, half};
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = tmax;
    int axis_in = -1, axis_out = -1;
    bool flip_in = false, flip_out = false;
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {d.x, d.y, d.z};
    const double lov[3] = {lo.x, lo.y, lo.z};
    const double hiv[3] = {hi.x, hi.y, hi.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dv[a]) < 1e-12) {
            if (ov[a] < lov[a] || ov[a] > hiv[a]) return false;
            continue;
        }
        double inv = 1.0 / dv[a];
        double ta = (lov[a] - ov[a]) * inv;
        double tb = (hiv[a] - ov[a]) * inv;
        bool swapped = ta > tb;
        if (swapped) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            axis_in = a;
            flip_in = swapped;
        }
        if (tb < t1) {
            t1 = tb;
            axis_out = a;
            flip_out = swapped;
        }
        if (t0 > t1) return false;
    }
    // entry face if it lies in range; otherwise the exit face (origin inside)
    int axis;
    bool flip;
    if (axis_in >= 0 && t0 > tmin) {
        t_out = t0;
        axis = axis_in;
        flip = flip_in;
    } else if (axis_out >= 0 && t1 > tmin && t1 < tmax) {
        t_out = t1;
        axis = axis_out;
        flip = !flip_out;
    } else {
        return false;
    }
    Vec3 n{0, 0, 0};
    double s = flip ? 1.0 : -1.0;
    if (axis == 0) n.x = s;
    if (axis == 1) n.y = s;
    if (axis == 2) n.z = s;
    n_out = n;
    return true;
}

Hit trace(const SceneSpec& scene, Vec3 o, Vec3 d, double tmin, double tmax) {
    Hit best;
    best.t = tmax;
    for (const auto& obj : scene.objects) {
        double t;
        Vec3 n;
        bool h = (obj.shape == Shape::sphere)
                     ? hit_sphere(obj.center, obj.size * 0.5, o, d, tmin, best.t, t, n)
                     : hit_box(obj.center, obj.size * 0.5, o, d, tmin, best.t, t, n);
        if (h) {
            best.hit = true;
            best.t = t;
            best.normal = n;
            best.mat = {obj.albedo, obj.roughness, obj.metallic, obj.specular};
        }
    }
    // ground plane y = height
    if (std::abs(d.y) > 1e-12) {
        double t = (scene.ground.height - o.y) / d.y;
        if (t > tmin && t < best.t) {
            best.hit = true;
            best.t = t;
            best.normal = {0, 1, 0};
            best.mat = {scene.ground.albedo, scene.ground.roughness, scene.ground.metallic,
                        scene.ground.specular};
        }
    }
    if (best.hit) best.pos = o + d * best.t;
    return best;
}

bool occluded(const SceneSpec& scene, Vec3 o, Vec3 d) {
    for (const auto& obj : scene.objects) {
        double t;
        Vec3 n;
        bool h = (obj.shape == Shape::sphere)
                     ? hit_sphere(obj.center, obj.size * 0.5, o, d, kShadowEps, kTFar, t, n)
                     : hit_box(obj.center, obj.size * 0.5, o, d, kShadowEps, kTFar, t, n);
        if (h) return true;
    }
    if (std::abs(d.y) > 1e-12) {
        double t = (scene.ground.height - o.y) / d.y;
        if (t > kShadowEps && t < kTFar) return true;
    }
    return false;
}

inline Vec3 texel_direction(int r, int c, int h, int w) {
    double theta = kPi * (r + 0.5) / h;
    double phi = 2.0 * kPi * (c + 0.5) / w;
    double st = std::sin(theta);
    return {st * std::cos(phi), std::cos(theta), st * std::sin(phi)};
}

inline double texel_solid_angle(int r, int h, int w) {
    double theta = kPi * (r + 0.5) / h;
    return (kPi / h) * (2.0 * kPi / w) * std::sin(theta);
}

// Cook-Torrance GGX specular with Smith G and Schlick F (Karis variant).
Vec3 brdf_eval(const Material& m, Vec3 n, Vec3 l, Vec3 v) {
    double nl = dot(n, l);
    double nv = dot(n, v);
    if (nl <= 0.0 || nv <= 0.0) return {0, 0, 0};
    Vec3 diffuse = m.albedo * ((1.0 - m.metallic) / kPi);
    // F0 = 0 means no dielectric interface at all: pure Lambertian surface
    if (m.specular == 0.0 && m.metallic == 0.0) return diffuse;

    Vec3 h = normalize(l + v);
    double nh = std::max(0.0, dot(n, h));
    double vh = std::max(0.0, dot(v, h));
    double alpha = std::max(m.roughness * m.roughness, kAlphaMin);
    double a2 = alpha * alpha;
    double denom = nh * nh * (a2 - 1.0) + 1.0;
    double D = a2 / (kPi * denom * denom);
    double k = (m.roughness + 1.0) * (m.roughness + 1.0) / 8.0;
    double g1l = nl / (nl * (1.0 - k) + k);
    double g1v = nv / (nv * (1.0 - k) + k);
    double G = g1l * g1v;
    Vec3 f0 = Vec3{0.08, 0.08, 0.08} * m.specular * (1.0 - m.metallic) + m.albedo * m.metallic;
    double fw = std::pow(1.0 - vh, 5.0);
    Vec3 F = f0 + (Vec3{1, 1, 1} - f0) * fw;
    Vec3 spec = F * (D * G / (4.0 * nl * nv));
    return diffuse + spec;
}

void validate_pose(const CameraPose& pose) {
    Vec3 d = pose.look_at - pose.position;
    if (length(d) < 1e-9) throw std::invalid_argument("camera pose: position equals look_at");
    if (!(pose.fov_deg > 10.0 && pose.fov_deg < 120.0))
        throw std::invalid_argument("camera pose: fov_deg outside (10, 120)");
}

json pose_to_json(const CameraPose& p) {
    return json{{"position", {p.position.x, p.position.y, p.position.z}},
                {"look_at", {p.look_at.x, p.look_at.y, p.look_at.z}},
                {"fov_deg", p.fov_deg},
                {"frame_index", p.frame_index}};
}

CameraPose pose_from_json(const json& j) {
    CameraPose p;
    p.position = {j.at("position")[0], j.at("position")[1], j.at("position")[2]};
    p.look_at = {j.at("look_at")[0], j.at("look_at")[1], j.at("look_at")[2]};
    p.fov_deg = j.at("fov_deg");
    p.frame_index = j.at("frame_index");
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------

SceneSpec gen_scene(std::uint64_t seed, int n_objects) {
    if (n_objects < 1 || n_objects > 8)
        throw std::invalid_argument("gen_scene: n_objects must be in [1, 8]");
    Rng rng(Rng::derive(seed, 11));
    SceneSpec s;
    s.seed = seed;
    s.ground.height = 0.0;
    double g = rng.uniform(0.3, 0.8);
    s.ground.albedo = {g, g * rng.uniform(0.9, 1.0), g * rng.uniform(0.9, 1.0)};
    s.ground.roughness = rng.uniform(0.4, 1.0);
    s.ground.metallic = 0.0;
    s.ground.specular = rng.uniform(0.2, 0.6);

    for (int i = 0; i < n_objects; ++i) {
        ObjectSpec o;
        o.name = "obj" + std::to_string(i);
        o.shape = rng.bernoulli(0.5) ? Shape::sphere : Shape::box;
        o.size = rng.uniform(0.5, 1.1);
        for (int attempt = 0; attempt < 64; ++attempt) {
            double r = rng.uniform(0.2, 1.4);
            double a = rng.uniform(0.0, 2.0 * kPi);
            o.center = {r * std::cos(a), s.ground.height + o.size * 0.5, r * std::sin(a)};
            bool ok = true;
            for (const auto& prev : s.objects)
                if (length(prev.center - o.center) < 0.45 * (prev.size + o.size)) ok = false;
            if (ok) break;
        }
        o.albedo = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
        o.roughness = rng.uniform(0.15, 1.0);
        o.metallic = rng.bernoulli(0.3) ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.15);
        o.specular = rng.uniform(0.2, 1.0);
        s.objects.push_back(std::move(o));
    }
    return s;
}

std::string scene_to_json(const SceneSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        objs.push_back({{"name", o.name},
                        {"shape", o.shape == Shape::sphere ? "sphere" : "box"},
                        {"center", {o.center.x, o.center.y, o.center.z}},
                        {"size", o.size},
                        {"albedo", {o.albedo.x, o.albedo.y, o.albedo.z}},
                        {"roughness", o.roughness},
                        {"metallic", o.metallic},
                        {"specular", o.specular}});
    }
    json j{{"seed", s.seed},
           {"objects", objs},
           {"ground",
            {{"height", s.ground.height},
             {"albedo", {s.ground.albedo.x, s.ground.albedo.y, s.ground.albedo.z}},
             {"roughness", s.ground.roughness},
             {"metallic", s.ground.metallic},
             {"specular", s.ground.specular}}}};
    return j.dump();
}

EnvMap gen_envmap(std::uint64_t seed, int env_h, int env_w) {
    if (env_h < 4 || env_w < 8)
        throw std::invalid_argument("gen_envmap: resolution must be at least 4x8");
    Rng rng(Rng::derive(seed, 22));
    double ambient = rng.uniform(0.05, 0.3);
    int k = 1 + static_cast<int>(rng.randint(4));
    struct Lobe {
        Vec3 dir;
        double peak, kappa;
    };
    std::vector<Lobe> lobes;
    for (int i = 0; i < k; ++i) {
        double y = rng.uniform(0.2, 1.0);  // bias lights above the horizon
        double az = rng.uniform(0.0, 2.0 * kPi);
        double rxy = std::sqrt(std::max(0.0, 1.0 - y * y));
        Lobe lb;
        lb.dir = {rxy * std::cos(az), y, rxy * std::sin(az)};
        lb.peak = rng.uniform(2.0, 20.0);
        lb.kappa = rng.uniform(8.0, 60.0);
        lobes.push_back(lb);
    }
    EnvMap env;
    env.hdr = Image(env_h, env_w, 3);
    for (int r = 0; r < env_h; ++r)
        for (int c = 0; c < env_w; ++c) {
            Vec3 d = texel_direction(r, c, env_h, env_w);
            double val = ambient;
            for (const auto& lb : lobes) val += lb.peak * std::exp(lb.kappa * (dot(d, lb.dir) - 1.0));
            // mild per-lobe tint for color variety
            Vec3 col{val, val, val};
            for (size_t li = 0; li < lobes.size(); ++li) {
                double contrib = lobes[li].peak *
                                 std::exp(lobes[li].kappa * (dot(d, lobes[li].dir) - 1.0));
                double tint = 0.15 * std::sin(0.7 * static_cast<double>(li + 1));
                col.x += tint * contrib;
                col.z -= tint * contrib;
            }
            env.hdr.at(r, c, 0) = static_cast<float>(std::max(0.0, col.x));
            env.hdr.at(r, c, 1) = static_cast<float>(std::max(0.0, col.y));
            env.hdr.at(r, c, 2) = static_cast<float>(std::max(0.0, col.z));
        }
    return env;
}

Vec3 env_lookup(const EnvMap& env, Vec3 dir) {
    const int h = env.hdr.h, w = env.hdr.w;
    dir = normalize(dir);
    double theta = std::acos(std::clamp(dir.y, -1.0, 1.0));
    double phi = std::atan2(dir.z, dir.x);
    if (phi < 0.0) phi += 2.0 * kPi;
    double fv = theta / kPi * h - 0.5;
    double fu = phi / (2.0 * kPi) * w - 0.5;
    int r0 = static_cast<int>(std::floor(fv));
    int c0 = static_cast<int>(std::floor(fu));
    double wv = fv - r0, wu = fu - c0;
    auto fetch = [&](int r, int c) -> Vec3 {
        r = std::clamp(r, 0, h - 1);
        c = ((c % w) + w) % w;
        return {env.hdr.at(r, c, 0), env.hdr.at(r, c, 1), env.hdr.at(r, c, 2)};
    };
    Vec3 v00 = fetch(r0, c0), v01 = fetch(r0, c0 + 1), v10 = fetch(r0 + 1, c0),
         v11 = fetch(r0 + 1, c0 + 1);
    return v00 * ((1 - wv) * (1 - wu)) + v01 * ((1 - wv) * wu) + v10 * (wv * (1 - wu)) +
           v11 * (wv * wu);
}

CameraBasis camera_basis(const CameraPose& pose) {
    validate_pose(pose);
    Vec3 fwd = normalize(pose.look_at - pose.position);
    Vec3 up_hint{0, 1, 0};
    if (std::abs(dot(fwd, up_hint)) > 0.999) up_hint = {0, 0, 1};
    Vec3 right = normalize(cross(fwd, up_hint));
    Vec3 up = cross(right, fwd);
    return {right, up, fwd * -1.0, fwd};
}

Image tonemap_rotate(const EnvMap& env, const CameraPose& pose) {
    CameraBasis cb = camera_basis(pose);
    const int h = env.hdr.h, w = env.hdr.w;
    Image out(h, w, 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            Vec3 dc = texel_direction(r, c, h, w);  // direction in camera space
            Vec3 dw = cb.right * dc.x + cb.up * dc.y + cb.back * dc.z;
            Vec3 rad = env_lookup(env, dw);
            out.at(r, c, 0) = static_cast<float>(reinhard(rad.x));
            out.at(r, c, 1) = static_cast<float>(reinhard(rad.y));
            out.at(r, c, 2) = static_cast<float>(reinhard(rad.z));
        }
    return out;
}

GBufferFrame rasterize_gbuffers(const SceneSpec& scene, const CameraPose& pose, int res_h,
                                int res_w, double d_max) {
    if (res_h < 16 || res_w < 16)
        throw std::invalid_argument("rasterize_gbuffers: resolution must be at least 16");
    CameraBasis cb = camera_basis(pose);
    double tan_half = std::tan(pose.fov_deg * kPi / 360.0);
    double aspect = static_cast<double>(res_w) / res_h;

    GBufferFrame f;
    f.albedo = Image(res_h, res_w, 3);
    f.normal = Image(res_h, res_w, 3);
    f.depth = Image(res_h, res_w, 1, 1.0f);
    f.material = Image(res_h, res_w, 3);
    f.hit_mask = Image(res_h, res_w, 1);

    for (int y = 0; y < res_h; ++y)
        for (int x = 0; x < res_w; ++x) {
            double u = ((x + 0.5) / res_w * 2.0 - 1.0) * tan_half * aspect;
            double v = (1.0 - (y + 0.5) / res_h * 2.0) * tan_half;
            Vec3 dir = normalize(cb.forward + cb.right * u + cb.up * v);
            Hit hit = trace(scene, pose.position, dir, 1e-6, kTFar);
            if (hit.hit) {
                f.hit_mask.at(y, x, 0) = 1.0f;
                f.albedo.at(y, x, 0) = static_cast<float>(hit.mat.albedo.x);
                f.albedo.at(y, x, 1) = static_cast<float>(hit.mat.albedo.y);
                f.albedo.at(y, x, 2) = static_cast<float>(hit.mat.albedo.z);
                Vec3 nc{dot(hit.normal, cb.right), dot(hit.normal, cb.up), dot(hit.normal, cb.back)};
                f.normal.at(y, x, 0) = static_cast<float>((nc.x + 1.0) * 0.5);
                f.normal.at(y, x, 1) = static_cast<float>((nc.y + 1.0) * 0.5);
                f.normal.at(y, x, 2) = static_cast<float>((nc.z + 1.0) * 0.5);
                f.depth.at(y, x, 0) = static_cast<float>(std::clamp(hit.t / d_max, 0.0, 1.0));
                f.material.at(y, x, 0) = static_cast<float>(hit.mat.roughness);
                f.material.at(y, x, 1) = static_cast<float>(hit.mat.metallic);
                f.material.at(y, x, 2) = static_cast<float>(hit.mat.specular);
            } else {
                // miss convention: encode(0,0,1) = (0.5, 0.5, 1)
                f.normal.at(y, x, 0) = 0.5f;
                f.normal.at(y, x, 1) = 0.5f;
                f.normal.at(y, x, 2) = 1.0f;
            }
        }
    return f;
}

bool visibility(const SceneSpec& scene, Vec3 point, Vec3 dir) {
    return !occluded(scene, point, normalize(dir));
}

Image render_radiance(const SceneSpec& scene, const EnvMap& env, const CameraPose& pose, int res_h,
                      int res_w) {
    CameraBasis cb = camera_basis(pose);
    double tan_half = std::tan(pose.fov_deg * kPi / 360.0);
    double aspect = static_cast<double>(res_w) / res_h;

    const int eh = env.hdr.h, ew = env.hdr.w;
    struct Light {
        Vec3 dir;
        Vec3 radiance;  // already weighted by solid angle
    };
    std::vector<Light> lights;
    lights.reserve(static_cast<size_t>(eh) * ew);
    for (int r = 0; r < eh; ++r)
        for (int c = 0; c < ew; ++c) {
            double dw = texel_solid_angle(r, eh, ew);
            lights.push_back({texel_direction(r, c, eh, ew),
                              Vec3{env.hdr.at(r, c, 0) * dw, env.hdr.at(r, c, 1) * dw,
                                   env.hdr.at(r, c, 2) * dw}});
        }

    Image out(res_h, res_w, 3);
    for (int y = 0; y < res_h; ++y)
        for (int x = 0; x < res_w; ++x) {
            double u = ((x + 0.5) / res_w * 2.0 - 1.0) * tan_half * aspect;
            double v = (1.0 - (y + 0.5) / res_h * 2.0) * tan_half;
            Vec3 dir = normalize(cb.forward + cb.right * u + cb.up * v);
            Hit hit = trace(scene, pose.position, dir, 1e-6, kTFar);
            Vec3 lo{0, 0, 0};
            if (!hit.hit) {
                lo = env_lookup(env, dir);
            } else {
                Vec3 wo = dir * -1.0;
                Vec3 origin = hit.pos + hit.normal * kShadowEps;
                for (const auto& lt : lights) {
                    double nl = dot(hit.normal, lt.dir);
                    if (nl <= 0.0) continue;
                    if (occluded(scene, origin, lt.dir)) continue;
                    Vec3 f = brdf_eval(hit.mat, hit.normal, lt.dir, wo);
                    lo = lo + lt.radiance * f * nl;
                }
            }
            out.at(y, x, 0) = static_cast<float>(lo.x);
            out.at(y, x, 1) = static_cast<float>(lo.y);
            out.at(y, x, 2) = static_cast<float>(lo.z);
        }
    return out;
}

Image render_reference(const SceneSpec& scene, const EnvMap& env, const CameraPose& pose, int res_h,
                       int res_w) {
    Image hdr = render_radiance(scene, env, pose, res_h, res_w);
    for (auto& x : hdr.v) x = reinhard(x);
    return hdr;
}

namespace {

void apply_interp(SceneSpec& scene, const MaterialInterp& mi, double alpha) {
    for (auto& o : scene.objects) {
        if (o.name != mi.object) continue;
        Vec3 val = mi.from + (mi.to - mi.from) * alpha;
        if (mi.param == "roughness")
            o.roughness = val.x;
        else if (mi.param == "metallic")
            o.metallic = val.x;
        else if (mi.param == "specular")
            o.specular = val.x;
        else if (mi.param == "albedo")
            o.albedo = val;
        else
            throw std::invalid_argument("material_interp: unknown parameter '" + mi.param + "'");
        return;
    }
    throw std::invalid_argument("material_interp: unknown object '" + mi.object + "'");
}

}  // namespace

Sequence synth_sequence(std::uint64_t seed, const SynthConfig& cfg) {
    if (cfg.frames < 1) throw std::invalid_argument("synth_sequence: frames must be >= 1");
    int n_objects = cfg.n_objects;
    if (n_objects == 0) {
        Rng r(Rng::derive(seed, 33));
        n_objects = 2 + static_cast<int>(r.randint(4));
    }
    SceneSpec scene = gen_scene(Rng::derive(seed, 1), n_objects);
    EnvMap env = gen_envmap(Rng::derive(seed, 2), cfg.env_h, cfg.env_w);

    if (cfg.material_interp) {
        // validate names up front so the error fires before any rendering
        SceneSpec probe = scene;
        apply_interp(probe, *cfg.material_interp, 0.0);
    }

    Rng cam_rng(Rng::derive(seed, 3));
    double phi0 = cam_rng.uniform(0.0, 2.0 * kPi);
    double elev = cam_rng.uniform(0.35, 0.75);
    double arc = cfg.orbit_arc_deg * kPi / 180.0;
    Vec3 look_at{0.0, 0.6, 0.0};

    Sequence seq;
    seq.seed = seed;
    seq.envmap = env;
    seq.interp = cfg.material_interp;
    for (int i = 0; i < cfg.frames; ++i) {
        double a = (cfg.frames > 1) ? static_cast<double>(i) / (cfg.frames - 1) : 0.0;
        double phi = phi0 + arc * a;
        CameraPose pose;
        pose.position = {cfg.orbit_radius * std::cos(phi) * std::cos(elev),
                         look_at.y + cfg.orbit_radius * std::sin(elev),
                         cfg.orbit_radius * std::sin(phi) * std::cos(elev)};
        pose.look_at = look_at;
        pose.fov_deg = 45.0;
        pose.frame_index = i;

        SceneSpec frame_scene = scene;
        if (cfg.material_interp) apply_interp(frame_scene, *cfg.material_interp, a);

        FrameData fd;
        fd.pose = pose;
        fd.g = rasterize_gbuffers(frame_scene, pose, cfg.res_h, cfg.res_w, cfg.d_max);
        fd.reference = render_reference(frame_scene, env, pose, cfg.res_h, cfg.res_w);
        seq.frames.push_back(std::move(fd));
        seq.envmap_ldr.push_back(tonemap_rotate(env, pose));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Sequence file io
//
//   magic "RFSQ", u32 version=1, u32 F, u32 H, u32 W, u32 H', u32 W'
//   per frame: albedo(3), normal(3), depth(1), material(3), hit_mask(1),
//              reference(3), envmap_ldr(H'xW'x3)   -- all float32 LE
//   envmap HDR block (H'xW'x3)
//   trailer: UTF-8 JSON {seed, camera poses, material_interp}
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw corrupt_file_error("sequence file: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::istream& is, std::vector<float>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!is) throw corrupt_file_error("sequence file: truncated payload");
}

}  // namespace

void write_sequence(const Sequence& seq, const std::string& path) {
    if (seq.frames.empty()) throw std::invalid_argument("write_sequence: empty sequence");
    const int f = static_cast<int>(seq.frames.size());
    const int h = seq.frames[0].g.albedo.h, w = seq.frames[0].g.albedo.w;
    const int eh = seq.envmap.hdr.h, ew = seq.envmap.hdr.w;
    if (static_cast<int>(seq.envmap_ldr.size()) != f)
        throw std::invalid_argument("write_sequence: envmap_ldr count != frame count");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_sequence: cannot open " + path);
    os.write("RFSQ", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<std::uint32_t>(f));
    put_u32(os, static_cast<std::uint32_t>(h));
    put_u32(os, static_cast<std::uint32_t>(w));
    put_u32(os, static_cast<std::uint32_t>(eh));
    put_u32(os, static_cast<std::uint32_t>(ew));
    for (const auto& fr : seq.frames) {
        put_floats(os, fr.g.albedo.v);
        put_floats(os, fr.g.normal.v);
        put_floats(os, fr.g.depth.v);
        put_floats(os, fr.g.material.v);
        put_floats(os, fr.g.hit_mask.v);
        put_floats(os, fr.reference.v);
        put_floats(os, seq.envmap_ldr[static_cast<size_t>(fr.pose.frame_index)].v);
    }
    put_floats(os, seq.envmap.hdr.v);

    json trailer;
    trailer["seed"] = seq.seed;
    json poses = json::array();
    for (const auto& fr : seq.frames) poses.push_back(pose_to_json(fr.pose));
    trailer["poses"] = poses;
    if (seq.interp) {
        trailer["material_interp"] = {{"object", seq.interp->object},
                                      {"param", seq.interp->param},
                                      {"from", {seq.interp->from.x, seq.interp->from.y, seq.interp->from.z}},
                                      {"to", {seq.interp->to.x, seq.interp->to.y, seq.interp->to.z}}};
    } else {
        trailer["material_interp"] = nullptr;
    }
    std::string t = trailer.dump();
    os.write(t.data(), static_cast<std::streamsize>(t.size()));
    if (!os) throw std::runtime_error("write_sequence: write failed for " + path);
}

Sequence read_sequence(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_sequence: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RFSQ", 4) != 0)
        throw corrupt_file_error("sequence file: bad magic");
    std::uint32_t version = get_u32(is);
    if (version != 1) throw corrupt_file_error("sequence file: unsupported version");
    int f = static_cast<int>(get_u32(is));
    int h = static_cast<int>(get_u32(is));
    int w = static_cast<int>(get_u32(is));
    int eh = static_cast<int>(get_u32(is));
    int ew = static_cast<int>(get_u32(is));
    if (f < 1 || h < 1 || w < 1 || eh < 1 || ew < 1)
        throw corrupt_file_error("sequence file: invalid dimensions");

    Sequence seq;
    for (int i = 0; i < f; ++i) {
        FrameData fd;
        fd.g.albedo = Image(h, w, 3);
        fd.g.normal = Image(h, w, 3);
        fd.g.depth = Image(h, w, 1);
        fd.g.material = Image(h, w, 3);
        fd.g.hit_mask = Image(h, w, 1);
        fd.reference = Image(h, w, 3);
        Image ldr(eh, ew, 3);
        get_floats(is, fd.g.albedo.v);
        get_floats(is, fd.g.normal.v);
        get_floats(is, fd.g.depth.v);
        get_floats(is, fd.g.material.v);
        get_floats(is, fd.g.hit_mask.v);
        get_floats(is, fd.reference.v);
        get_floats(is, ldr.v);
        seq.frames.push_back(std::move(fd));
        seq.envmap_ldr.push_back(std::move(ldr));
    }
    seq.envmap.hdr = Image(eh, ew, 3);
    get_floats(is, seq.envmap.hdr.v);

    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json trailer;
    try {
        trailer = json::parse(rest);
    } catch (const json::exception&) {
        throw corrupt_file_error("sequence file: bad JSON trailer");
    }
    seq.seed = trailer.at("seed");
    const auto& poses = trailer.at("poses");
    if (poses.size() != static_cast<size_t>(f))
        throw corrupt_file_error("sequence file: pose count mismatch");
    for (int i = 0; i < f; ++i) seq.frames[static_cast<size_t>(i)].pose = pose_from_json(poses[static_cast<size_t>(i)]);
    if (!trailer.at("material_interp").is_null()) {
        const auto& mi = trailer["material_interp"];
        MaterialInterp m;
        m.object = mi.at("object");
        m.param = mi.at("param");
        m.from = {mi.at("from")[0], mi.at("from")[1], mi.at("from")[2]};
        m.to = {mi.at("to")[0], mi.at("to")[1], mi.at("to")[2]};
        seq.interp = m;
    }
    return seq;
}

void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries) {
    json j;
    j["sequences"] = json::array();
    for (const auto& e : entries) j["sequences"].push_back({{"path", e.path}, {"split", e.split}});
    std::ofstream os(std::filesystem::path(dir) / "manifest.json");
    if (!os) throw std::runtime_error("write_manifest: cannot open manifest in " + dir);
    os << j.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& dir) {
    std::ifstream is(std::filesystem::path(dir) / "manifest.json");
    if (!is) throw std::runtime_error("read_manifest: no manifest.json in " + dir);
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw corrupt_file_error("manifest.json: parse error");
    std::vector<ManifestEntry> out;
    for (const auto& e : j.at("sequences")) out.push_back({e.at("path"), e.at("split")});
    return out;
}

std::vector<ManifestEntry> synth_dataset(const std::string& dir, std::uint64_t seed,
                                         int n_sequences, const SynthConfig& cfg) {
    if (n_sequences < 1) throw std::invalid_argument("synth_dataset: need at least one sequence");
    std::filesystem::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < n_sequences; ++i) {
        Sequence seq = synth_sequence(Rng::derive(seed, 100 + static_cast<std::uint64_t>(i)), cfg);
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%04d.rfsq", i);
        write_sequence(seq, (std::filesystem::path(dir) / name).string());
        std::string split = (i % 10 == 8) ? "val" : (i % 10 == 9) ? "test" : "train";
        entries.push_back({name, split});
    }
    write_manifest(dir, entries);
    return entries;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    for (const auto& e : read_manifest(dir)) {
        Sequence s = read_sequence((std::filesystem::path(dir) / e.path).string());
        if (e.split == "val")
            ds.val.push_back(std::move(s));
        else if (e.split == "test")
            ds.test.push_back(std::move(s));
        else
            ds.train.push_back(std::move(s));
    }
    return ds;
}

}  // namespace rf
