#include "voxbox/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace voxbox {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiVoxOffset = 352;

enum NiftiType : std::int16_t { kUint8 = 2, kInt16 = 4, kFloat32 = 16 };

template <class V>
V get(std::span<const std::uint8_t> b, std::size_t off) {
    V v;
    std::memcpy(&v, b.data() + off, sizeof(V));
    return v;
}

template <class V>
void set(std::vector<std::uint8_t>& b, std::size_t off, V v) {
    std::memcpy(b.data() + off, &v, sizeof(V));
}

bool has_gz_suffix(const fs::path& p) { return p.extension() == ".gz"; }

// Column c of the NIfTI (i,j,k) affine is array axis 2-c of the geometry.
Mat3 ijk_columns(const Geometry& g) {
    Mat3 m{};
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) m[r][c] = g.direction[r][2 - c] * g.spacing[2 - c];
    return m;
}

void set_from_ijk_columns(Geometry& g, const Mat3& m) {
    for (int c = 0; c < 3; ++c) {
        const double norm = std::sqrt(m[0][c] * m[0][c] + m[1][c] * m[1][c] + m[2][c] * m[2][c]);
        if (!(norm > 0)) throw IoError("NIfTI affine has a zero-length axis");
        g.spacing[2 - c] = norm;
        for (int r = 0; r < 3; ++r) g.direction[r][2 - c] = m[r][c] / norm;
    }
}

Mat3 quaternion_to_rotation(double b, double c, double d) {
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    return {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
             {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
             {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}}};
}

// Returns (b, c, d, qfac) for an orthonormal matrix R.
std::array<double, 4> rotation_to_quaternion(Mat3 r) {
    double qfac = 1.0;
    if (determinant(r) < 0) {
        qfac = -1.0;
        for (int i = 0; i < 3; ++i) r[i][2] = -r[i][2];
    }
    double a = r[0][0] + r[1][1] + r[2][2] + 1.0, b, c, d;
    if (a > 0.5) {
        a = 0.5 * std::sqrt(a);
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if (xd > 1.0) {
            b = 0.5 * std::sqrt(xd);
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if (yd > 1.0) {
            c = 0.5 * std::sqrt(yd);
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * std::sqrt(zd);
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if (a < 0) {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    return {b, c, d, qfac};
}

} // namespace

std::vector<std::uint8_t> read_file_bytes(const fs::path& path, bool allow_gzip) {
    if (!fs::exists(path)) throw IoError("no such file: " + path.string());
    if (!allow_gzip) {
        std::ifstream in(path, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) out.insert(out.end(), chunk, chunk + n);
    int err = 0;
    const char* msg = gzerror(f, &err);
    const bool failed = n < 0 || (err != Z_OK && err != Z_STREAM_END);
    const std::string detail = msg ? msg : "";
    gzclose(f);
    if (failed) throw TruncatedError("corrupt or truncated compressed stream in " + path.string() + ": " + detail);
    return out;
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw IoError("cannot write " + path.string());
        const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(f);
        if (written != static_cast<int>(bytes.size())) throw IoError("short write to " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

Volume parse_nifti(std::span<const std::uint8_t> b) {
    if (b.size() < kNiftiHeaderSize) throw TruncatedError("NIfTI header truncated: " + std::to_string(b.size()) + " bytes");
    if (get<std::int32_t>(b, 0) != 348) throw BadMagicError("NIfTI sizeof_hdr is not 348");
    if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) throw BadMagicError("NIfTI magic is not \"n+1\"");

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(b, 40 + 2 * i);
    if (dim[0] < 3 || dim[0] > 7) throw IoError("NIfTI dim[0]=" + std::to_string(dim[0]) + " is not a 3-D volume");
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] > 1) throw IoError("only 3-D NIfTI volumes are supported");
    }
    for (int i = 1; i <= 3; ++i) {
        if (dim[i] <= 0) throw IoError("NIfTI dim[" + std::to_string(i) + "] is not positive");
    }
    const auto datatype = get<std::int16_t>(b, 70);
    std::size_t bytes_per = 0;
    switch (datatype) {
    case kUint8: bytes_per = 1; break;
    case kInt16: bytes_per = 2; break;
    case kFloat32: bytes_per = 4; break;
    default: throw UnsupportedDtypeError("unsupported NIfTI datatype " + std::to_string(datatype));
    }
    std::array<float, 8> pixdim{};
    for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(b, 76 + 4 * i);
    const auto vox_offset = static_cast<std::size_t>(get<float>(b, 108));
    float slope = get<float>(b, 112);
    const float inter = get<float>(b, 116);
    const auto qform_code = get<std::int16_t>(b, 252);
    const auto sform_code = get<std::int16_t>(b, 254);

    Volume v;
    v.geometry.extents = {dim[3], dim[2], dim[1]};
    const std::size_t count = static_cast<std::size_t>(v.geometry.voxel_count());
    if (vox_offset < kNiftiHeaderSize || vox_offset + count * bytes_per > b.size()) {
        throw TruncatedError("NIfTI payload truncated: need " + std::to_string(vox_offset + count * bytes_per) +
                             " bytes, have " + std::to_string(b.size()));
    }
    v.voxels.resize(count);
    const std::uint8_t* p = b.data() + vox_offset;
    for (std::size_t i = 0; i < count; ++i) {
        switch (datatype) {
        case kUint8: v.voxels[i] = static_cast<float>(p[i]); break;
        case kInt16: {
            std::int16_t s;
            std::memcpy(&s, p + 2 * i, 2);
            v.voxels[i] = static_cast<float>(s);
            break;
        }
        default: std::memcpy(&v.voxels[i], p + 4 * i, 4); break;
        }
    }
    if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
        for (auto& x : v.voxels) x = x * slope + inter;
    }

    Geometry& g = v.geometry;
    if (sform_code > 0) {
        Mat3 m{};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) m[r][c] = get<float>(b, 280 + 16 * r + 4 * c);
            g.origin[r] = get<float>(b, 280 + 16 * r + 12);
        }
        set_from_ijk_columns(g, m);
    } else if (qform_code > 0) {
        const Mat3 rot = quaternion_to_rotation(get<float>(b, 256), get<float>(b, 260), get<float>(b, 264));
        const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
        Mat3 m{};
        for (int r = 0; r < 3; ++r) {
            m[r][0] = rot[r][0] * pixdim[1];
            m[r][1] = rot[r][1] * pixdim[2];
            m[r][2] = rot[r][2] * pixdim[3] * qfac;
        }
        for (int r = 0; r < 3; ++r) g.origin[r] = get<float>(b, 268 + 4 * r);
        set_from_ijk_columns(g, m);
    } else {
        g.spacing = {pixdim[3], pixdim[2], pixdim[1]};
        g.direction = ras_direction();
        g.origin = {0, 0, 0};
    }
    g.validate();
    return v;
}

Volume read_nifti(const fs::path& path) {
    Volume v = parse_nifti(read_file_bytes(path));
    auto stem = path.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string e(ext);
        if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0) {
            stem.resize(stem.size() - e.size());
            break;
        }
    }
    v.subject_id = stem;
    return v;
}

LabelVolume read_nifti_label(const fs::path& path) { return to_label(read_nifti(path)); }

namespace {

std::vector<std::uint8_t> nifti_header(const Geometry& g, std::int16_t datatype, std::int16_t bitpix) {
    g.validate();
    std::vector<std::uint8_t> h(kNiftiVoxOffset, 0);
    set<std::int32_t>(h, 0, 348);
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(g.extents[2]),
                                          static_cast<std::int16_t>(g.extents[1]),
                                          static_cast<std::int16_t>(g.extents[0]), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) set<std::int16_t>(h, 40 + 2 * i, dim[i]);
    set<std::int16_t>(h, 70, datatype);
    set<std::int16_t>(h, 72, bitpix);

    const Mat3 cols = ijk_columns(g);
    Mat3 rot{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot[r][c] = g.direction[r][2 - c];
    const auto [qb, qc, qd, qfac] = rotation_to_quaternion(rot);
    const std::array<float, 8> pixdim{static_cast<float>(qfac), static_cast<float>(g.spacing[2]),
                                      static_cast<float>(g.spacing[1]), static_cast<float>(g.spacing[0]),
                                      1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) set<float>(h, 76 + 4 * i, pixdim[i]);
    set<float>(h, 108, static_cast<float>(kNiftiVoxOffset));
    set<float>(h, 112, 1.0f);
    set<float>(h, 116, 0.0f);
    h[123] = 2; // xyzt_units: mm
    set<std::int16_t>(h, 252, 1);
    set<std::int16_t>(h, 254, 1);
    set<float>(h, 256, static_cast<float>(qb));
    set<float>(h, 260, static_cast<float>(qc));
    set<float>(h, 264, static_cast<float>(qd));
    for (int r = 0; r < 3; ++r) set<float>(h, 268 + 4 * r, static_cast<float>(g.origin[r]));
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) set<float>(h, 280 + 16 * r + 4 * c, static_cast<float>(cols[r][c]));
        set<float>(h, 280 + 16 * r + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(h.data() + 344, "n+1\0", 4);
    return h;
}

} // namespace

void write_nifti(const Volume& v, const fs::path& path) {
    auto bytes = nifti_header(v.geometry, kFloat32, 32);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(v.voxels.data());
    bytes.insert(bytes.end(), raw, raw + v.voxels.size() * sizeof(float));
    write_file_bytes(path, bytes);
}

void write_nifti(const LabelVolume& l, const fs::path& path) {
    auto bytes = nifti_header(l.geometry, kUint8, 8);
    bytes.insert(bytes.end(), l.voxels.begin(), l.voxels.end());
    write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------- features

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

struct Writer {
    std::vector<std::uint8_t> out;
    template <class V>
    void put(V v) {
        std::uint8_t raw[sizeof(V)];
        std::memcpy(raw, &v, sizeof(V));
        out.insert(out.end(), raw, raw + sizeof(V));
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
};

struct Reader {
    std::span<const std::uint8_t> in;
    std::size_t pos = 0;
    const char* what;

    void need(std::size_t n) const {
        if (pos + n > in.size()) throw TruncatedError(std::string(what) + " truncated at byte " + std::to_string(pos));
    }
    template <class V>
    V take() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, in.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    }
    std::string take_string() {
        const auto n = take<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

std::vector<std::uint8_t> encode_feature_file(const FeatureFile& file) {
    Writer w;
    w.put_bytes("VXF1", 4);
    w.put_string(file.subject_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(file.levels.size()));
    for (const auto& level : file.levels) {
        std::int64_t n = 1;
        for (auto e : level.extents) {
            if (e <= 0) throw ShapeError("feature level extents must be positive");
            n *= e;
            w.put<std::uint64_t>(static_cast<std::uint64_t>(e));
        }
        if (static_cast<std::int64_t>(level.payload.size()) != n) {
            throw ShapeError("feature level payload has " + std::to_string(level.payload.size()) + " values, extents imply " +
                             std::to_string(n));
        }
        w.put_bytes(level.payload.data(), level.payload.size() * sizeof(float));
    }
    w.put_string(file.encoder_tag);
    w.put<std::uint64_t>(fnv1a64(w.out));
    return std::move(w.out);
}

FeatureFile decode_feature_file(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "VXF1", 4) != 0) throw BadMagicError("not a VXF1 feature file");
    if (bytes.size() < 12) throw TruncatedError("VXF1 file truncated");
    const auto stored = get<std::uint64_t>(bytes, bytes.size() - 8);
    if (fnv1a64(bytes.first(bytes.size() - 8)) != stored) throw ChecksumError("VXF1 checksum mismatch");

    Reader r{bytes.first(bytes.size() - 8), 4, "VXF1 file"};
    FeatureFile f;
    f.subject_id = r.take_string();
    const auto count = r.take<std::uint32_t>();
    if (count != 4) throw IoError("VXF1 level count is " + std::to_string(count) + ", expected 4");
    for (std::uint32_t i = 0; i < count; ++i) {
        FeatureLevel level;
        std::uint64_t n = 1;
        for (auto& e : level.extents) {
            const auto v = r.take<std::uint64_t>();
            if (v == 0 || v > (1ULL << 40)) throw IoError("VXF1 level extent out of range");
            e = static_cast<std::int64_t>(v);
            n *= v;
        }
        r.need(n * sizeof(float));
        level.payload.resize(n);
        std::memcpy(level.payload.data(), bytes.data() + r.pos, n * sizeof(float));
        r.pos += n * sizeof(float);
        f.levels.push_back(std::move(level));
    }
    f.encoder_tag = r.take_string();
    if (r.pos != r.in.size()) throw IoError("VXF1 file has trailing bytes before the checksum");
    for (const auto& level : f.levels) {
        if (level.extents != f.levels.front().extents) throw IoError("VXF1 levels have inconsistent extents");
    }
    return f;
}

void write_feature_file(const FeatureFile& file, const fs::path& path) {
    if (file.levels.size() != 4) throw ShapeError("feature files carry exactly four levels");
    write_file_bytes(path, encode_feature_file(file));
}

FeatureFile read_feature_file(const fs::path& path) { return decode_feature_file(read_file_bytes(path, false)); }

// ------------------------------------------------------------- checkpoints

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    Writer w;
    w.put_bytes("VXCK", 4);
    w.put<std::uint32_t>(1);
    w.put_string(ckpt.config_json);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        w.put_string(name);
        const auto blob = serialize_tensor(tensor);
        w.put_bytes(blob.data(), blob.size());
    }
    write_file_bytes(path, w.out);
}

Checkpoint read_checkpoint(const fs::path& path) {
    const auto bytes = read_file_bytes(path, false);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "VXCK", 4) != 0) throw BadMagicError("not a VXCK checkpoint");
    Reader r{bytes, 4, "checkpoint"};
    const auto version = r.take<std::uint32_t>();
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_json = r.take_string();
    const auto count = r.take<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take_string();
        ckpt.tensors.emplace(std::move(name), deserialize_tensor(bytes, r.pos));
    }
    return ckpt;
}

// ----------------------------------------------------------------- reports

double EvalReport::mean_dsc() const {
    if (subjects.empty()) return 0.0;
    double s = 0;
    for (const auto& m : subjects) s += m.dsc;
    return s / static_cast<double>(subjects.size());
}

double EvalReport::mean_iou() const {
    if (subjects.empty()) return 0.0;
    double s = 0;
    for (const auto& m : subjects) s += m.iou;
    return s / static_cast<double>(subjects.size());
}

std::optional<double> EvalReport::mean_vol_error_pct() const {
    double s = 0;
    int n = 0;
    for (const auto& m : subjects) {
        if (m.vol_error_pct) {
            s += *m.vol_error_pct;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return s / n;
}

std::string report_json(std::span<const EvalReport> reports) {
    using nlohmann::json;
    auto vol = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json configs = json::array();
    for (const auto& rep : reports) {
        json rows = json::array();
        for (const auto& m : rep.subjects) {
            rows.push_back({{"subject", m.subject_id}, {"dsc", m.dsc}, {"iou", m.iou}, {"vol_error_pct", vol(m.vol_error_pct)}});
        }
        configs.push_back({{"configuration", rep.configuration},
                           {"subjects", rows},
                           {"mean", {{"dsc", rep.mean_dsc()}, {"iou", rep.mean_iou()}, {"vol_error_pct", vol(rep.mean_vol_error_pct())}}}});
    }
    return json{{"configurations", configs}}.dump(2) + "\n";
}

void write_report(std::span<const EvalReport> reports, const fs::path& path) {
    const std::string text = report_json(reports);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_report(const EvalReport& report, const fs::path& path) { write_report(std::span(&report, 1), path); }

// ---------------------------------------------------------------- overlays

const char* plane_name(Plane plane) noexcept {
    switch (plane) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
    }
    return "unknown";
}

RgbImage render_overlay(const Volume& volume, const LabelVolume& pred, const LabelVolume& gt, Plane plane,
                        std::int64_t index) {
    const Index3 e = volume.geometry.extents;
    if (pred.geometry.extents != e || gt.geometry.extents != e) {
        throw ShapeError("overlay: prediction/ground-truth extents " + index_string(pred.geometry.extents) + "/" +
                         index_string(gt.geometry.extents) + " do not match volume " + index_string(e));
    }
    if (volume.voxels.empty()) throw ShapeError("overlay: empty volume");
    const int fixed_axis = plane == Plane::axial ? 0 : plane == Plane::coronal ? 1 : 2;
    if (index < 0 || index >= e[fixed_axis]) {
        throw ShapeError("overlay: " + std::string(plane_name(plane)) + " index " + std::to_string(index) + " out of range");
    }
    RgbImage img;
    // rows, cols in array coordinates; flip rows for D so superior is up
    const int row_axis = plane == Plane::axial ? 1 : 0;
    const int col_axis = plane == Plane::sagittal ? 1 : 2;
    img.height = e[row_axis];
    img.width = e[col_axis];
    img.rgb.assign(static_cast<std::size_t>(img.width * img.height * 3), 0);
    const bool flip = row_axis == 0;

    auto voxel = [&](std::int64_t row, std::int64_t col) {
        Index3 c{};
        c[fixed_axis] = index;
        c[row_axis] = flip ? e[row_axis] - 1 - row : row;
        c[col_axis] = col;
        return (c[0] * e[1] + c[1]) * e[2] + c[2];
    };
    const auto [lo_it, hi_it] = std::minmax_element(volume.voxels.begin(), volume.voxels.end());
    const double lo = *lo_it, range = std::max(1e-12, static_cast<double>(*hi_it) - lo);
    auto gt_at = [&](std::int64_t row, std::int64_t col) -> bool {
        if (row < 0 || col < 0 || row >= img.height || col >= img.width) return false;
        return gt.voxels[voxel(row, col)] != 0;
    };
    for (std::int64_t r = 0; r < img.height; ++r)
        for (std::int64_t c = 0; c < img.width; ++c) {
            const auto v = voxel(r, c);
            const double gray = 255.0 * (volume.voxels[v] - lo) / range;
            double rgb[3] = {gray, gray, gray};
            if (pred.voxels[v]) {
                rgb[0] = 0.5 * gray + 127.5;
                rgb[1] = 0.5 * gray;
                rgb[2] = 0.5 * gray;
            }
            if (gt_at(r, c) && (!gt_at(r - 1, c) || !gt_at(r + 1, c) || !gt_at(r, c - 1) || !gt_at(r, c + 1))) {
                rgb[0] = 0;
                rgb[1] = 255;
                rgb[2] = 0;
            }
            for (int k = 0; k < 3; ++k) {
                img.rgb[static_cast<std::size_t>((r * img.width + c) * 3 + k)] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(rgb[k]), 0L, 255L));
            }
        }
    return img;
}

void write_ppm(const RgbImage& image, const fs::path& path) {
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
    write_file_bytes(path, bytes);
}

void write_overlay(const Volume& volume, const LabelVolume& pred, const LabelVolume& gt, Plane plane,
                   std::int64_t index, const fs::path& path) {
    write_ppm(render_overlay(volume, pred, gt, plane, index), path);
}

} // namespace voxbox
