// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fabcor/image.hpp"

namespace fabcor {

struct Point {
    std::int32_t x = 0;
    std::int32_t y = 0;
    bool operator==(const Point& o) const { return x == o.x && y == o.y; }
};

// Closed integer-coordinate ring; first point repeated last.
using Ring = std::vector<Point>;

// Polygons of one (layer, datatype). Outer rings counterclockwise (positive
// shoelace area), hole rings clockwise.
struct PolySet {
    int layer = 1;
    int datatype = 0;
    std::vector<Ring> polygons;
    int dbu_nm = 1; // database unit in nanometers

    bool operator==(const PolySet& o) const {
        return layer == o.layer && datatype == o.datatype && polygons == o.polygons &&
               dbu_nm == o.dbu_nm;
    }
};

struct GdsLibrary {
    std::string name = "LIB";
    std::vector<PolySet> polysets; // grouped by (layer, datatype), first-seen order
    std::vector<std::string> warnings; // skipped record types
};

// Supported record subset: HEADER, BGNLIB, LIBNAME, UNITS, BGNSTR, STRNAME,
// BOUNDARY, LAYER, DATATYPE, XY, ENDEL, ENDSTR, ENDLIB. SREF/AREF/PATH/TEXT
// raise UnsupportedElementError; unknown types are skipped with a warning.
GdsLibrary read_gds(const std::vector<std::uint8_t>& bytes);

// Canonical big-endian stream; read_gds(write_gds(x)) == x.
std::vector<std::uint8_t> write_gds(const std::vector<PolySet>& polysets,
                                    const std::string& library_name);

// GDSII 8-byte excess-64 floating point.
void encode_gds_real(double v, std::uint8_t out[8]);
double decode_gds_real(const std::uint8_t in[8]);

// Pixel (x, y) is set iff its center lies inside an odd number of rings
// (even-odd rule). Pixel center in dbu coordinates:
// origin + (pixel_index + 0.5) / px_per_dbu.
BitMask rasterize(const PolySet& polyset, int canvas_w, int canvas_h,
                  double origin_x = 0.0, double origin_y = 0.0, double px_per_dbu = 1.0);

// Boundary tracing of 4-connected components on the pixel-corner lattice.
// rasterize(vectorize(m)) == m exactly at simplify_tol_px = 0.
PolySet vectorize(const BitMask& mask, double simplify_tol_px = 0.0,
                  int layer = 1, int datatype = 0);

std::int64_t shoelace_x2(const Ring& ring); // signed doubled area

} // namespace fabcor
