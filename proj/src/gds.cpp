// SPDX-License-Identifier: Apache-2.0
#include "fabcor/gds.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "fabcor/errors.hpp"

namespace fabcor {

namespace {

// record types
constexpr std::uint8_t kHeader = 0x00;
constexpr std::uint8_t kBgnLib = 0x01;
constexpr std::uint8_t kLibName = 0x02;
constexpr std::uint8_t kUnits = 0x03;
constexpr std::uint8_t kEndLib = 0x04;
constexpr std::uint8_t kBgnStr = 0x05;
constexpr std::uint8_t kStrName = 0x06;
constexpr std::uint8_t kEndStr = 0x07;
constexpr std::uint8_t kBoundary = 0x08;
constexpr std::uint8_t kPath = 0x09;
constexpr std::uint8_t kSref = 0x0A;
constexpr std::uint8_t kAref = 0x0B;
constexpr std::uint8_t kText = 0x0C;
constexpr std::uint8_t kLayer = 0x0D;
constexpr std::uint8_t kDatatype = 0x0E;
constexpr std::uint8_t kXy = 0x10;
constexpr std::uint8_t kEndEl = 0x11;
constexpr std::uint8_t kNode = 0x15;
constexpr std::uint8_t kBox = 0x2D;

const char* record_name(std::uint8_t t) {
    switch (t) {
        case kPath: return "PATH";
        case kSref: return "SREF";
        case kAref: return "AREF";
        case kText: return "TEXT";
        case kNode: return "NODE";
        case kBox: return "BOX";
        default: return "record";
    }
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    std::uint32_t u = static_cast<std::uint32_t>(v);
    out.push_back(static_cast<std::uint8_t>(u >> 24));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
}

void emit_record(std::vector<std::uint8_t>& out, std::uint8_t type, std::uint8_t dtype,
                 const std::vector<std::uint8_t>& payload) {
    std::size_t len = payload.size() + 4;
    if (len > 0xFFFF || len % 2 != 0)
        throw ContractError("GDS record payload too large or odd");
    put_u16(out, static_cast<std::uint16_t>(len));
    out.push_back(type);
    out.push_back(dtype);
    out.insert(out.end(), payload.begin(), payload.end());
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    struct Record {
        std::size_t offset = 0;
        std::uint8_t type = 0;
        std::uint8_t dtype = 0;
        const std::uint8_t* payload = nullptr;
        std::size_t len = 0; // payload length
    };

    bool eof() const { return pos >= buf.size(); }

    Record next() {
        Record r;
        r.offset = pos;
        if (buf.size() - pos < 4) throw ParseError("truncated record header", pos);
        std::uint16_t total = static_cast<std::uint16_t>((buf[pos] << 8) | buf[pos + 1]);
        if (total < 4) throw ParseError("record length below header size", pos);
        if (total % 2 != 0) throw ParseError("odd record length", pos);
        if (buf.size() - pos < total) throw ParseError("truncated record payload", pos);
        r.type = buf[pos + 2];
        r.dtype = buf[pos + 3];
        r.payload = buf.data() + pos + 4;
        r.len = static_cast<std::size_t>(total) - 4;
        pos += total;
        return r;
    }
};

std::int16_t get_i16(const Reader::Record& r, std::size_t at) {
    return static_cast<std::int16_t>((r.payload[at] << 8) | r.payload[at + 1]);
}

std::int32_t get_i32(const Reader::Record& r, std::size_t at) {
    std::uint32_t u = (static_cast<std::uint32_t>(r.payload[at]) << 24) |
                      (static_cast<std::uint32_t>(r.payload[at + 1]) << 16) |
                      (static_cast<std::uint32_t>(r.payload[at + 2]) << 8) |
                      static_cast<std::uint32_t>(r.payload[at + 3]);
    return static_cast<std::int32_t>(u);
}

} // namespace

void encode_gds_real(double v, std::uint8_t out[8]) {
    std::memset(out, 0, 8);
    if (v == 0.0) return;
    bool neg = v < 0.0;
    double a = neg ? -v : v;
    int exp = 0;
    while (a >= 1.0) {
        a /= 16.0;
        ++exp;
    }
    while (a < 1.0 / 16.0) {
        a *= 16.0;
        --exp;
    }
    std::uint64_t mant = static_cast<std::uint64_t>(std::llround(a * 72057594037927936.0)); // 2^56
    if (mant >= (1ull << 56)) { // rounding carried over
        mant >>= 4;
        ++exp;
    }
    out[0] = static_cast<std::uint8_t>((neg ? 0x80 : 0x00) | ((exp + 64) & 0x7F));
    for (int i = 0; i < 7; ++i)
        out[1 + i] = static_cast<std::uint8_t>((mant >> (8 * (6 - i))) & 0xFF);
}

double decode_gds_real(const std::uint8_t in[8]) {
    bool neg = (in[0] & 0x80) != 0;
    int exp = (in[0] & 0x7F) - 64;
    std::uint64_t mant = 0;
    for (int i = 0; i < 7; ++i) mant = (mant << 8) | in[1 + i];
    double v = static_cast<double>(mant) / 72057594037927936.0 * std::pow(16.0, exp);
    return neg ? -v : v;
}

std::int64_t shoelace_x2(const Ring& ring) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i)
        s += static_cast<std::int64_t>(ring[i].x) * ring[i + 1].y -
             static_cast<std::int64_t>(ring[i + 1].x) * ring[i].y;
    return s;
}

GdsLibrary read_gds(const std::vector<std::uint8_t>& bytes) {
    Reader rd{bytes};
    GdsLibrary lib;

    if (rd.eof()) throw ParseError("empty stream", 0);
    auto first = rd.next();
    if (first.type != kHeader) throw ParseError("stream does not start with HEADER", first.offset);

    bool in_struct = false;
    bool saw_struct = false;
    bool saw_endlib = false;
    int dbu_nm = 1;
    std::map<std::pair<int, int>, std::size_t> group_index;

    while (!rd.eof()) {
        auto rec = rd.next();
        if (rec.type == kEndLib) {
            if (in_struct) throw ParseError("ENDLIB inside structure", rec.offset);
            saw_endlib = true;
            break;
        }
        switch (rec.type) {
            case kBgnLib:
            case kUnits:
                if (rec.type == kUnits) {
                    if (rec.len != 16) throw ParseError("UNITS payload must be 16 bytes", rec.offset);
                    double meters = decode_gds_real(rec.payload + 8);
                    double nm = meters * 1e9;
                    long r = std::lround(nm);
                    if (r < 1 || std::fabs(nm - static_cast<double>(r)) > 1e-3)
                        throw ParseError("unsupported database unit", rec.offset);
                    dbu_nm = static_cast<int>(r);
                }
                break;
            case kLibName:
                lib.name.assign(reinterpret_cast<const char*>(rec.payload), rec.len);
                while (!lib.name.empty() && lib.name.back() == '\0') lib.name.pop_back();
                break;
            case kBgnStr:
                if (saw_struct)
                    throw UnsupportedElementError("multiple structures are not supported",
                                                  rec.offset);
                in_struct = true;
                saw_struct = true;
                break;
            case kStrName:
                break;
            case kEndStr:
                if (!in_struct) throw ParseError("ENDSTR outside structure", rec.offset);
                in_struct = false;
                break;
            case kSref:
            case kAref:
            case kPath:
            case kText:
            case kNode:
            case kBox:
                throw UnsupportedElementError(std::string("unsupported element ") +
                                                  record_name(rec.type),
                                              rec.offset);
            case kBoundary: {
                if (!in_struct) throw ParseError("BOUNDARY outside structure", rec.offset);
                int layer = -1, datatype = -1;
                Ring ring;
                bool closed_el = false;
                while (!rd.eof()) {
                    auto er = rd.next();
                    if (er.type == kLayer) {
                        if (er.len < 2) throw ParseError("short LAYER payload", er.offset);
                        layer = get_i16(er, 0);
                    } else if (er.type == kDatatype) {
                        if (er.len < 2) throw ParseError("short DATATYPE payload", er.offset);
                        datatype = get_i16(er, 0);
                    } else if (er.type == kXy) {
                        if (er.len % 8 != 0) throw ParseError("XY payload not i32 pairs", er.offset);
                        std::size_t npts = er.len / 8;
                        if (npts < 4) throw ParseError("XY with fewer than 4 points", er.offset);
                        ring.resize(npts);
                        for (std::size_t i = 0; i < npts; ++i) {
                            ring[i].x = get_i32(er, i * 8);
                            ring[i].y = get_i32(er, i * 8 + 4);
                        }
                        if (!(ring.front() == ring.back()))
                            throw ParseError("boundary ring not closed", er.offset);
                        if (shoelace_x2(ring) == 0)
                            throw ParseError("zero-area boundary ring", er.offset);
                    } else if (er.type == kEndEl) {
                        closed_el = true;
                        break;
                    } else if (er.type == kSref || er.type == kAref || er.type == kPath ||
                               er.type == kText || er.type == kNode || er.type == kBox) {
                        throw UnsupportedElementError(std::string("unsupported element ") +
                                                          record_name(er.type),
                                                      er.offset);
                    } else {
                        lib.warnings.push_back("skipped record type " +
                                               std::to_string(er.type) + " inside BOUNDARY");
                    }
                }
                if (!closed_el) throw ParseError("BOUNDARY without ENDEL", rd.pos);
                if (layer < 0) throw ParseError("BOUNDARY without LAYER", rec.offset);
                if (datatype < 0) throw ParseError("BOUNDARY without DATATYPE", rec.offset);
                if (ring.empty()) throw ParseError("BOUNDARY without XY", rec.offset);
                auto key = std::make_pair(layer, datatype);
                auto it = group_index.find(key);
                if (it == group_index.end()) {
                    it = group_index.emplace(key, lib.polysets.size()).first;
                    PolySet ps;
                    ps.layer = layer;
                    ps.datatype = datatype;
                    lib.polysets.push_back(std::move(ps));
                }
                lib.polysets[it->second].polygons.push_back(std::move(ring));
                break;
            }
            default:
                lib.warnings.push_back("skipped record type " + std::to_string(rec.type));
                break;
        }
    }
    if (!saw_endlib) throw ParseError("missing ENDLIB", bytes.size());
    // allow trailing zero padding (tape-block convention), reject other data
    for (std::size_t i = rd.pos; i < bytes.size(); ++i)
        if (bytes[i] != 0) throw ParseError("trailing data after ENDLIB", i);
    for (auto& ps : lib.polysets) ps.dbu_nm = dbu_nm;
    return lib;
}

std::vector<std::uint8_t> write_gds(const std::vector<PolySet>& polysets,
                                    const std::string& library_name) {
    int dbu_nm = polysets.empty() ? 1 : polysets.front().dbu_nm;
    for (const auto& ps : polysets)
        if (ps.dbu_nm != dbu_nm)
            throw ContractError("write_gds: mixed database units in one library");
    if (dbu_nm < 1) throw ContractError("write_gds: database unit must be >= 1 nm");

    std::vector<std::uint8_t> out;
    emit_record(out, kHeader, 0x02, {0x02, 0x58}); // version 600

    std::vector<std::uint8_t> stamps(24, 0); // fixed timestamps keep output canonical
    emit_record(out, kBgnLib, 0x02, stamps);

    std::string name = library_name;
    if (name.size() % 2) name.push_back('\0');
    emit_record(out, kLibName, 0x06,
                std::vector<std::uint8_t>(name.begin(), name.end()));

    std::vector<std::uint8_t> units(16);
    encode_gds_real(dbu_nm * 1e-3, units.data());     // user units per dbu (um convention)
    encode_gds_real(dbu_nm * 1e-9, units.data() + 8); // meters per dbu
    emit_record(out, kUnits, 0x05, units);

    emit_record(out, kBgnStr, 0x02, stamps);
    emit_record(out, kStrName, 0x06, {'T', 'O', 'P', '\0'});

    for (const auto& ps : polysets) {
        for (const auto& ring : ps.polygons) {
            if (ring.size() < 4)
                throw ContractError("write_gds: ring must have at least 4 points");
            if (!(ring.front() == ring.back()))
                throw ContractError("write_gds: ring not closed");
            if (ring.size() > 8191)
                throw ContractError("write_gds: ring exceeds the XY record capacity");
            emit_record(out, kBoundary, 0x00, {});
            std::vector<std::uint8_t> pl;
            put_u16(pl, static_cast<std::uint16_t>(ps.layer));
            emit_record(out, kLayer, 0x02, pl);
            pl.clear();
            put_u16(pl, static_cast<std::uint16_t>(ps.datatype));
            emit_record(out, kDatatype, 0x02, pl);
            pl.clear();
            pl.reserve(ring.size() * 8);
            for (const auto& p : ring) {
                put_i32(pl, p.x);
                put_i32(pl, p.y);
            }
            emit_record(out, kXy, 0x03, pl);
            emit_record(out, kEndEl, 0x00, {});
        }
    }
    emit_record(out, kEndStr, 0x00, {});
    emit_record(out, kEndLib, 0x00, {});
    return out;
}

// ---------------------------------------------------------------------------
// raster <-> vector

BitMask rasterize(const PolySet& polyset, int canvas_w, int canvas_h, double origin_x,
                  double origin_y, double px_per_dbu) {
    if (px_per_dbu <= 0.0) throw ContractError("rasterize: px_per_dbu must be positive");
    BitMask out(canvas_w, canvas_h);

    struct Edge {
        double x1, y1, x2, y2;
    };
    std::vector<Edge> edges;
    for (const auto& ring : polyset.polygons)
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
            if (ring[i].y == ring[i + 1].y) continue; // horizontal: never crossed
            edges.push_back({static_cast<double>(ring[i].x), static_cast<double>(ring[i].y),
                             static_cast<double>(ring[i + 1].x),
                             static_cast<double>(ring[i + 1].y)});
        }
    if (edges.empty()) return out;

    std::vector<double> crossings;
    for (int py = 0; py < canvas_h; ++py) {
        double yc = origin_y + (py + 0.5) / px_per_dbu;
        crossings.clear();
        for (const auto& e : edges) {
            if ((e.y1 <= yc) == (e.y2 <= yc)) continue;
            crossings.push_back(e.x1 + (yc - e.y1) * (e.x2 - e.x1) / (e.y2 - e.y1));
        }
        if (crossings.empty()) continue;
        std::sort(crossings.begin(), crossings.end());
        std::size_t ci = 0;
        bool inside = false;
        for (int px = 0; px < canvas_w; ++px) {
            double xc = origin_x + (px + 0.5) / px_per_dbu;
            while (ci < crossings.size() && crossings[ci] < xc) {
                inside = !inside;
                ++ci;
            }
            if (inside) out.set(px, py, 1);
        }
    }
    return out;
}

namespace {

// directions on the corner lattice: E, S, W, N
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

void drop_collinear(std::vector<Point>& ring) {
    // ring is open here (no closure point); removes circularly collinear points
    bool changed = true;
    while (changed && ring.size() > 4) {
        changed = false;
        std::vector<Point> next;
        next.reserve(ring.size());
        std::size_t n = ring.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = ring[(i + n - 1) % n];
            const Point& b = ring[i];
            const Point& c = ring[(i + 1) % n];
            std::int64_t cross = static_cast<std::int64_t>(b.x - a.x) * (c.y - a.y) -
                                 static_cast<std::int64_t>(b.y - a.y) * (c.x - a.x);
            if (cross == 0) {
                changed = true;
                continue;
            }
            next.push_back(b);
        }
        ring.swap(next);
    }
}

double point_line_dist(const Point& p, const Point& a, const Point& b) {
    double vx = b.x - a.x, vy = b.y - a.y;
    double wx = p.x - a.x, wy = p.y - a.y;
    double len = std::sqrt(vx * vx + vy * vy);
    if (len == 0.0) return std::sqrt(wx * wx + wy * wy);
    return std::fabs(vx * wy - vy * wx) / len;
}

void simplify_ring(std::vector<Point>& ring, double tol) {
    if (tol <= 0.0) return;
    bool changed = true;
    while (changed && ring.size() > 4) {
        changed = false;
        std::size_t n = ring.size();
        std::vector<Point> next;
        next.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = ring[(i + n - 1) % n];
            const Point& b = ring[i];
            const Point& c = ring[(i + 1) % n];
            if (point_line_dist(b, a, c) <= tol && n - (next.size() < i ? i - next.size() : 0) > 4) {
                // only drop if the ring stays a polygon
                if (n > 4) {
                    changed = true;
                    continue;
                }
            }
            next.push_back(b);
        }
        if (next.size() >= 3)
            ring.swap(next);
        else
            break;
    }
}

} // namespace

PolySet vectorize(const BitMask& mask, double simplify_tol_px, int layer, int datatype) {
    if (simplify_tol_px < 0.0) throw ContractError("vectorize: negative tolerance");
    const int w = mask.width, h = mask.height;
    const int cw = w + 1; // corner lattice width

    auto fg = [&](int x, int y) -> bool {
        return x >= 0 && x < w && y >= 0 && y < h && mask.at(x, y);
    };

    // Directed boundary edges, foreground kept on the right of the walk
    // direction. One byte of flags per corner, bit d = outgoing edge dir d.
    std::vector<std::uint8_t> out_edges(static_cast<std::size_t>(cw) * (h + 1), 0);
    auto add_edge = [&](int cx, int cy, int dir) {
        out_edges[static_cast<std::size_t>(cy) * cw + cx] |= static_cast<std::uint8_t>(1 << dir);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y)) continue;
            if (!fg(x, y - 1)) add_edge(x, y, 0);         // north side, walk east
            if (!fg(x + 1, y)) add_edge(x + 1, y, 1);     // east side, walk south
            if (!fg(x, y + 1)) add_edge(x + 1, y + 1, 2); // south side, walk west
            if (!fg(x - 1, y)) add_edge(x, y + 1, 3);     // west side, walk north
        }

    PolySet ps;
    ps.layer = layer;
    ps.datatype = datatype;

    auto pick_dir = [&](int cx, int cy, int incoming) -> int {
        std::uint8_t flags = out_edges[static_cast<std::size_t>(cy) * cw + cx];
        int count = __builtin_popcount(flags);
        if (count == 1) {
            for (int d = 0; d < 4; ++d)
                if (flags & (1 << d)) return d;
        }
        // checkerboard corner: resolve by the 2x2 pixel block so each loop
        // keeps hugging its own region
        bool nw = fg(cx - 1, cy - 1), ne = fg(cx, cy - 1);
        bool sw = fg(cx - 1, cy), se = fg(cx, cy);
        if (nw && se && !ne && !sw) return incoming == 1 ? 2 : 0; // S->W, N->E
        if (ne && sw && !nw && !se) return incoming == 0 ? 3 : 1; // E->N, W->S
        // cannot happen for a well-formed edge set
        for (int d = 0; d < 4; ++d)
            if (flags & (1 << d)) return d;
        return -1;
    };

    for (int sy = 0; sy <= h; ++sy) {
        for (int sx = 0; sx <= w; ++sx) {
            for (int sd = 0; sd < 4; ++sd) {
                if (!(out_edges[static_cast<std::size_t>(sy) * cw + sx] & (1 << sd))) continue;
                std::vector<Point> ring;
                int cx = sx, cy = sy, dir = sd;
                do {
                    out_edges[static_cast<std::size_t>(cy) * cw + cx] &=
                        static_cast<std::uint8_t>(~(1 << dir));
                    ring.push_back({cx, cy});
                    cx += kDx[dir];
                    cy += kDy[dir];
                    if (cx == sx && cy == sy) break;
                    dir = pick_dir(cx, cy, dir);
                } while (dir >= 0);
                drop_collinear(ring);
                simplify_ring(ring, simplify_tol_px);
                if (ring.size() >= 3) {
                    ring.push_back(ring.front());
                    ps.polygons.push_back(std::move(ring));
                }
            }
        }
    }
    return ps;
}

} // namespace fabcor
