#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "renderflow/common.hpp"

namespace rf {

// ---------------------------------------------------------------------------
// Procedural scene description
// ---------------------------------------------------------------------------

enum class Shape { sphere, box };

struct ObjectSpec {
    std::string name;
    Shape shape = Shape::sphere;
    Vec3 center;
    double size = 1.0;  // full extent: sphere diameter / box edge
    Vec3 albedo{0.5, 0.5, 0.5};
    double roughness = 0.5;
    double metallic = 0.0;
    double specular = 0.5;
};

struct GroundPlane {
    double height = 0.0;
    Vec3 albedo{0.5, 0.5, 0.5};
    double roughness = 0.8;
    double metallic = 0.0;
    double specular = 0.5;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
    GroundPlane ground;
};

struct CameraPose {
    Vec3 position;
    Vec3 look_at;
    double fov_deg = 45.0;
    int frame_index = 0;
};

struct EnvMap {
    Image hdr;  // (H', W', 3) non-negative radiance, lat-long
};

struct GBufferFrame {
    Image albedo;    // (H,W,3)
    Image normal;    // (H,W,3) camera-space unit vectors encoded (n+1)/2
    Image depth;     // (H,W,1) linear distance / d_max, clamped to [0,1]
    Image material;  // (H,W,3) roughness, metallic, specular
    Image hit_mask;  // (H,W,1)
};

struct MaterialInterp {
    std::string object;
    std::string param;  // roughness | metallic | specular | albedo
    Vec3 from, to;      // scalar params use .x
};

struct FrameData {
    GBufferFrame g;
    Image reference;  // (H,W,3) tonemapped
    CameraPose pose;
};

struct Sequence {
    std::vector<FrameData> frames;
    EnvMap envmap;
    std::vector<Image> envmap_ldr;  // per frame, camera-rotated + tonemapped
    std::uint64_t seed = 0;
    std::optional<MaterialInterp> interp;
};

struct SynthConfig {
    int frames = 5;
    int res_h = 64, res_w = 64;
    int env_h = 16, env_w = 32;
    double orbit_radius = 3.0;
    double orbit_arc_deg = 60.0;
    int n_objects = 0;  // 0: draw 2..5 from the seed
    double d_max = 8.0;
    std::optional<MaterialInterp> material_interp;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

SceneSpec gen_scene(std::uint64_t seed, int n_objects);
std::string scene_to_json(const SceneSpec& s);

EnvMap gen_envmap(std::uint64_t seed, int env_h, int env_w);

// Bilinear lat-long lookup of a world direction.
Vec3 env_lookup(const EnvMap& env, Vec3 dir);

// Camera basis: x=right, y=up, z=back (towards the camera).
struct CameraBasis {
    Vec3 right, up, back, forward;
};
CameraBasis camera_basis(const CameraPose& pose);

// Rotate the envmap into camera view space and Reinhard-tonemap it.
Image tonemap_rotate(const EnvMap& env, const CameraPose& pose);

GBufferFrame rasterize_gbuffers(const SceneSpec& scene, const CameraPose& pose, int res_h,
                                int res_w, double d_max = 8.0);

// Pre-tonemap outgoing radiance (misses show raw envmap radiance along the ray).
Image render_radiance(const SceneSpec& scene, const EnvMap& env, const CameraPose& pose,
                      int res_h, int res_w);
// Reinhard-tonemapped variant; this is what datasets store as `reference`.
Image render_reference(const SceneSpec& scene, const EnvMap& env, const CameraPose& pose,
                       int res_h, int res_w);

// Binary shadow visibility from a surface point towards a direction.
bool visibility(const SceneSpec& scene, Vec3 point, Vec3 dir);

Sequence synth_sequence(std::uint64_t seed, const SynthConfig& cfg);

void write_sequence(const Sequence& seq, const std::string& path);
Sequence read_sequence(const std::string& path);

struct ManifestEntry {
    std::string path;   // relative to the dataset directory
    std::string split;  // train | val | test
};
void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& dir);

// Synthesize n sequences + manifest under dir. Split tags: i%10==8 -> val,
// i%10==9 -> test, else train. Returns the manifest.
std::vector<ManifestEntry> synth_dataset(const std::string& dir, std::uint64_t seed,
                                         int n_sequences, const SynthConfig& cfg);

struct Dataset {
    std::vector<Sequence> train, val, test;
};
Dataset load_dataset(const std::string& dir);

}  // namespace rf
