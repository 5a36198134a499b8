#pragma once

#include <stdexcept>

#include "renderflow/scene.hpp"
#include "renderflow/tensor.hpp"

namespace rf {

// Converters from dataset sequences to (F,H,W,C) model tensors.

template <class T>
Tensor<T> clip_albedo(const Sequence& s, int start, int count) {
    if (start < 0 || count < 1 || start + count > static_cast<int>(s.frames.size()))
        throw std::invalid_argument("clip_albedo: window out of range");
    const Image& a0 = s.frames[static_cast<size_t>(start)].g.albedo;
    Tensor<T> t({count, a0.h, a0.w, 3});
    std::int64_t off = 0;
    for (int f = 0; f < count; ++f) {
        const Image& img = s.frames[static_cast<size_t>(start + f)].g.albedo;
        for (float v : img.v) t.v[off++] = static_cast<T>(v);
    }
    return t;
}

template <class T>
Tensor<T> clip_reference(const Sequence& s, int start, int count) {
    const Image& a0 = s.frames[static_cast<size_t>(start)].reference;
    Tensor<T> t({count, a0.h, a0.w, 3});
    std::int64_t off = 0;
    for (int f = 0; f < count; ++f) {
        const Image& img = s.frames[static_cast<size_t>(start + f)].reference;
        for (float v : img.v) t.v[off++] = static_cast<T>(v);
    }
    return t;
}

// normal(3) + depth(1) + material(3) + hit_mask(1)
template <class T>
Tensor<T> clip_attributes(const Sequence& s, int start, int count) {
    const GBufferFrame& g0 = s.frames[static_cast<size_t>(start)].g;
    const int h = g0.normal.h, w = g0.normal.w;
    Tensor<T> t({count, h, w, 8});
    for (int f = 0; f < count; ++f) {
        const GBufferFrame& g = s.frames[static_cast<size_t>(start + f)].g;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                std::int64_t base = ((static_cast<std::int64_t>(f) * h + y) * w + x) * 8;
                t.v[base + 0] = static_cast<T>(g.normal.at(y, x, 0));
                t.v[base + 1] = static_cast<T>(g.normal.at(y, x, 1));
                t.v[base + 2] = static_cast<T>(g.normal.at(y, x, 2));
                t.v[base + 3] = static_cast<T>(g.depth.at(y, x, 0));
                t.v[base + 4] = static_cast<T>(g.material.at(y, x, 0));
                t.v[base + 5] = static_cast<T>(g.material.at(y, x, 1));
                t.v[base + 6] = static_cast<T>(g.material.at(y, x, 2));
                t.v[base + 7] = static_cast<T>(g.hit_mask.at(y, x, 0));
            }
    }
    return t;
}

template <class T>
Tensor<T> clip_envmaps(const Sequence& s, int start, int count) {
    const Image& e0 = s.envmap_ldr[static_cast<size_t>(start)];
    Tensor<T> t({count, e0.h, e0.w, 3});
    std::int64_t off = 0;
    for (int f = 0; f < count; ++f) {
        const Image& img = s.envmap_ldr[static_cast<size_t>(start + f)];
        for (float v : img.v) t.v[off++] = static_cast<T>(v);
    }
    return t;
}

template <class T>
Tensor<T> clip_buffer(const Sequence& s, int start, int count, const Image GBufferFrame::*field) {
    const Image& a0 = s.frames[static_cast<size_t>(start)].g.*field;
    Tensor<T> t({count, a0.h, a0.w, a0.c});
    std::int64_t off = 0;
    for (int f = 0; f < count; ++f) {
        const Image& img = s.frames[static_cast<size_t>(start + f)].g.*field;
        for (float v : img.v) t.v[off++] = static_cast<T>(v);
    }
    return t;
}

// Keyframe images at the given absolute indices, stacked (K,H,W,3).
template <class T>
Tensor<T> gather_keyframes(const Sequence& s, const std::vector<int>& indices) {
    if (indices.empty()) return Tensor<T>();
    const Image& a0 = s.frames[0].reference;
    Tensor<T> t({static_cast<int>(indices.size()), a0.h, a0.w, 3});
    std::int64_t off = 0;
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(s.frames.size()))
            throw std::invalid_argument("gather_keyframes: index out of range");
        for (float v : s.frames[static_cast<size_t>(idx)].reference.v) t.v[off++] = static_cast<T>(v);
    }
    return t;
}

inline std::vector<int> keyframe_indices_for(int total_frames, int gap) {
    if (gap < 1) throw std::invalid_argument("keyframe gap must be >= 1");
    std::vector<int> idx;
    for (int i = 0; i < total_frames; i += gap) idx.push_back(i);
    return idx;
}

template <class T>
std::vector<Image> tensor_to_images(const Tensor<T>& clip, bool clamp01 = true) {
    if (clip.rank() != 4) throw std::invalid_argument("tensor_to_images: expected (F,H,W,C)");
    std::vector<Image> out;
    const int f = clip.dim(0), h = clip.dim(1), w = clip.dim(2), c = clip.dim(3);
    std::int64_t off = 0;
    for (int i = 0; i < f; ++i) {
        Image img(h, w, c);
        for (size_t j = 0; j < img.v.size(); ++j) {
            float x = static_cast<float>(clip.v[off++]);
            img.v[j] = clamp01 ? std::min(1.0f, std::max(0.0f, x)) : x;
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace rf
