// SPDX-License-Identifier: Apache-2.0
#include "flowlm/checkpoint.hpp"

#include "flowlm/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace flowlm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'L', 'M', 'C', 'K'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_string(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_matrix(std::ostream& out, const ad::Matrix& m) {
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("checkpoint: truncated file");
}
std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    read_exact(in, reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    read_exact(in, reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
constexpr std::uint64_t kMaxBlob = std::uint64_t{1} << 34;
std::string get_string(std::istream& in) {
    const std::uint64_t n = get_u64(in);
    if (n > kMaxBlob) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    read_exact(in, s.data(), n);
    return s;
}
ad::Matrix get_matrix(std::istream& in) {
    const std::uint64_t r = get_u64(in), c = get_u64(in);
    if (r > kMaxBlob || c > kMaxBlob || r * c > kMaxBlob) throw FormatError("checkpoint: implausible matrix shape");
    ad::Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    read_exact(in, reinterpret_cast<char*>(m.data()), r * c * sizeof(double));
    return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out.write(kMagic, sizeof kMagic);
    put_u32(out, ck.version);
    put_string(out, ck.config_ini);
    put_string(out, to_string(ck.token_mode));
    put_u64(out, ck.vocab_tokens.size());
    for (const auto& t : ck.vocab_tokens) put_string(out, t);
    put_u64(out, ck.seed);
    put_u64(out, ck.step);
    put_u64(out, ck.params.size());
    for (const auto& p : ck.params) {
        put_string(out, p.name);
        put_matrix(out, p.value);
    }
    put_u64(out, ck.adam_steps);
    put_u64(out, ck.adam_m.size());
    for (std::size_t i = 0; i < ck.adam_m.size(); ++i) {
        put_matrix(out, ck.adam_m[i]);
        put_matrix(out, ck.adam_v[i]);
    }
    if (!out) throw FormatError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[sizeof kMagic];
    read_exact(in, magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("checkpoint: bad magic");
    Checkpoint ck;
    ck.version = get_u32(in);
    if (ck.version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported format version " + std::to_string(ck.version));
    }
    ck.config_ini = get_string(in);
    try {
        ck.token_mode = parse_token_mode(get_string(in));
    } catch (const InputError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    const std::uint64_t nv = get_u64(in);
    if (nv > kMaxBlob) throw FormatError("checkpoint: implausible vocabulary size");
    for (std::uint64_t i = 0; i < nv; ++i) ck.vocab_tokens.push_back(get_string(in));
    ck.seed = get_u64(in);
    ck.step = get_u64(in);
    const std::uint64_t np = get_u64(in);
    if (np > kMaxBlob) throw FormatError("checkpoint: implausible parameter count");
    for (std::uint64_t i = 0; i < np; ++i) {
        NamedMatrix p;
        p.name = get_string(in);
        p.value = get_matrix(in);
        ck.params.push_back(std::move(p));
    }
    ck.adam_steps = get_u64(in);
    const std::uint64_t nm = get_u64(in);
    if (nm != 0 && nm != np) throw FormatError("checkpoint: optimizer state does not match parameters");
    for (std::uint64_t i = 0; i < nm; ++i) {
        ck.adam_m.push_back(get_matrix(in));
        ck.adam_v.push_back(get_matrix(in));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    write_checkpoint(out, ck);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    return read_checkpoint(in);
}

Checkpoint capture(const RunConfig& cfg, const Vocabulary& vocab, const Model& model, const Adam& adam,
                   std::uint64_t step) {
    Checkpoint ck;
    ck.config_ini = to_ini(cfg);
    ck.token_mode = vocab.mode();
    ck.vocab_tokens = vocab.tokens();
    ck.seed = cfg.seed;
    ck.step = step;
    for (const auto* p : model.params().all()) ck.params.push_back({p->name, p->value});
    ck.adam_steps = adam.steps();
    ck.adam_m = adam.first_moments();
    ck.adam_v = adam.second_moments();
    return ck;
}

Restored restore(const Checkpoint& ck) {
    std::istringstream ini(ck.config_ini);
    if (ck.vocab_tokens.size() <= static_cast<std::size_t>(Vocabulary::kReserved)) {
        throw FormatError("checkpoint: vocabulary has no regular tokens");
    }
    Restored r{parse_config(ini),
               Vocabulary(ck.token_mode, std::vector<std::string>(ck.vocab_tokens.begin() + Vocabulary::kReserved,
                                                                  ck.vocab_tokens.end())),
               nullptr, nullptr, ck.step};
    if (r.vocab.tokens() != ck.vocab_tokens) throw FormatError("checkpoint: vocabulary does not round-trip");
    r.model = std::make_unique<Model>(r.config.model_spec(r.vocab.size()), r.config.seed);
    auto params = r.model->params().all();
    if (params.size() != ck.params.size()) throw FormatError("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedMatrix& src = ck.params[i];
        if (src.name != params[i]->name) throw FormatError("checkpoint: parameter order mismatch at " + src.name);
        if (src.value.rows() != params[i]->value.rows() || src.value.cols() != params[i]->value.cols()) {
            throw FormatError("checkpoint: shape mismatch for " + src.name);
        }
        params[i]->value = src.value;
    }
    r.adam = std::make_unique<Adam>(r.config.optim_config());
    r.adam->set_state(ck.adam_steps, ck.adam_m, ck.adam_v);
    return r;
}

}  // namespace flowlm
