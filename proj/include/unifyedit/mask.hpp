#pragma once

#include <Eigen/Dense>
#include <string>

#include "unifyedit/errors.hpp"
#include "unifyedit/io.hpp"

namespace unifyedit {

// Spatial 0/1 mask stored as doubles so it can participate directly in
// blending and update arithmetic. 1 marks the region being edited.
struct BinaryMask {
    Eigen::MatrixXd values;  // height x width

    int height() const { return static_cast<int>(values.rows()); }
    int width() const { return static_cast<int>(values.cols()); }

    static BinaryMask all_ones(int height, int width) {
        BinaryMask m;
        m.values = Eigen::MatrixXd::Ones(height, width);
        return m;
    }

    bool is_all_ones() const { return (values.array() == 1.0).all(); }

    double coverage() const {
        return values.size() == 0 ? 0.0 : values.sum() / static_cast<double>(values.size());
    }

    // Rejects empty interiors by default; pass allow_empty for masks that are
    // legitimately all zero (none of the edit paths accept one).
    void validate(bool allow_empty = false) const {
        detail::require(values.rows() > 0 && values.cols() > 0, "BinaryMask: empty dimensions");
        detail::require(((values.array() == 0.0) || (values.array() == 1.0)).all(),
                        "BinaryMask: entries must be exactly 0 or 1");
        if (!allow_empty) {
            detail::require((values.array() == 1.0).any(),
                            "BinaryMask: mask selects no pixels");
        }
    }
};

// Row-major flattening of a square mask at an attention resolution; index
// j = y * resolution + x matches the attention map's row/column order.
struct FlattenedMask {
    Eigen::VectorXd vector;
    int resolution = 0;

    void validate() const {
        detail::require(resolution > 0, "FlattenedMask: resolution must be positive");
        detail::require_shape(vector.size() ==
                                  static_cast<Eigen::Index>(resolution) * resolution,
                              "FlattenedMask: vector length must equal resolution^2");
        detail::require(((vector.array() == 0.0) || (vector.array() == 1.0)).all(),
                        "FlattenedMask: entries must be exactly 0 or 1");
    }
};

// Outer product m m^T of a flattened mask with itself, used to restrict a
// self-attention comparison to query/key pairs that both lie in the region.
struct SAMaskOuter {
    Eigen::MatrixXd matrix;
    int resolution = 0;
};

inline SAMaskOuter mask_outer(const FlattenedMask& mask) {
    mask.validate();
    SAMaskOuter outer;
    outer.resolution = mask.resolution;
    outer.matrix = mask.vector * mask.vector.transpose();
    return outer;
}

// Area-average downsampling (or box upsampling) followed by a 0.5 threshold.
// Output dimensions must divide or be divisible by the input dimensions.
inline BinaryMask resample_mask(const BinaryMask& mask, int out_height, int out_width) {
    mask.validate(true);
    detail::require(out_height > 0 && out_width > 0, "resample_mask: output must be non-empty");
    const int in_h = mask.height();
    const int in_w = mask.width();
    detail::require((in_h % out_height == 0) || (out_height % in_h == 0),
                    "resample_mask: heights must be integer multiples");
    detail::require((in_w % out_width == 0) || (out_width % in_w == 0),
                    "resample_mask: widths must be integer multiples");

    BinaryMask out;
    out.values = Eigen::MatrixXd::Zero(out_height, out_width);
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            // Map the output cell onto its covering input block.
            int y0 = y * in_h / out_height;
            int y1 = (y + 1) * in_h / out_height;
            int x0 = x * in_w / out_width;
            int x1 = (x + 1) * in_w / out_width;
            if (y1 <= y0) y1 = y0 + 1;
            if (x1 <= x0) x1 = x0 + 1;
            double total = 0.0;
            for (int yy = y0; yy < y1; ++yy) {
                for (int xx = x0; xx < x1; ++xx) total += mask.values(yy, xx);
            }
            double mean = total / ((y1 - y0) * (x1 - x0));
            out.values(y, x) = mean >= 0.5 ? 1.0 : 0.0;
        }
    }
    return out;
}

inline FlattenedMask flatten_mask(const BinaryMask& mask) {
    mask.validate(true);
    detail::require(mask.height() == mask.width(),
                    "flatten_mask: mask must be square at an attention resolution");
    FlattenedMask flat;
    flat.resolution = mask.height();
    flat.vector.resize(static_cast<Eigen::Index>(flat.resolution) * flat.resolution);
    for (int y = 0; y < flat.resolution; ++y) {
        for (int x = 0; x < flat.resolution; ++x) {
            flat.vector[static_cast<Eigen::Index>(y) * flat.resolution + x] = mask.values(y, x);
        }
    }
    return flat;
}

// Resample to a square attention resolution and flatten in one step.
inline FlattenedMask mask_at_resolution(const BinaryMask& mask, int resolution) {
    return flatten_mask(resample_mask(mask, resolution, resolution));
}

inline BinaryMask mask_from_pgm(const std::string& path) {
    PgmImage image = read_pgm(path);
    BinaryMask mask;
    mask.values = Eigen::MatrixXd::Zero(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            std::uint8_t value = image.pixels[static_cast<std::size_t>(y) * image.width + x];
            mask.values(y, x) = value >= 128 ? 1.0 : 0.0;
        }
    }
    try {
        mask.validate();
    } catch (const validation_error& e) {
        throw validation_error(std::string(e.what()) + " (" + path + ")");
    }
    return mask;
}

inline void mask_to_pgm(const std::string& path, const BinaryMask& mask) {
    mask.validate(true);
    PgmImage image;
    image.width = mask.width();
    image.height = mask.height();
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            image.pixels[static_cast<std::size_t>(y) * image.width + x] =
                mask.values(y, x) == 1.0 ? 255 : 0;
        }
    }
    write_pgm(path, image);
}

}  // namespace unifyedit
