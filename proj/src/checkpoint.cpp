#include "nrpa/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nrpa/binary_io.hpp"

namespace nrpa {

namespace {

constexpr char kMagic[5] = "NRPA";

std::size_t* dim_fields(ModelDims& d, std::size_t i) {
    std::size_t* fields[] = {&d.vocab_size, &d.num_users,     &d.num_items, &d.word_dim,
                             &d.id_dim,     &d.num_filters,   &d.attention_dim, &d.window,
                             &d.fm_factors, &d.tokens_per_review, &d.num_reviews};
    return fields[i];
}

constexpr std::size_t kDimCount = 11;

ConvActivation activation_from_metadata(const std::string& metadata) {
    std::istringstream in(metadata);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (trim(line.substr(0, eq)) == "conv_activation") return parse_activation(trim(line.substr(eq + 1)));
    }
    return ConvActivation::Relu;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
    ModelDims dims = checkpoint.params.dims;
    binary::write_magic(out, kMagic);
    binary::write_le<std::uint32_t>(out, kCheckpointVersion);
    for (std::size_t i = 0; i < kDimCount; ++i) binary::write_le<std::uint64_t>(out, *dim_fields(dims, i));
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.metadata.size()));
    out.write(checkpoint.metadata.data(), static_cast<std::streamsize>(checkpoint.metadata.size()));
    for_each_tensor(checkpoint.params, [&](std::string_view, std::span<const double> values) {
        for (const double v : values) binary::write_le<double>(out, v);
    });
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    binary::expect_magic(in, kMagic, "checkpoint");
    const auto version = binary::read_le<std::uint32_t>(in, "checkpoint version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    ModelDims dims;
    for (std::size_t i = 0; i < kDimCount; ++i)
        *dim_fields(dims, i) = static_cast<std::size_t>(binary::read_le<std::uint64_t>(in, "checkpoint dims"));
    dims.validate();

    Checkpoint cp;
    const auto meta_len = binary::read_le<std::uint32_t>(in, "metadata length");
    cp.metadata.resize(meta_len);
    if (!in.read(cp.metadata.data(), meta_len)) throw std::runtime_error("checkpoint: truncated metadata");

    cp.params = zero_params(dims, activation_from_metadata(cp.metadata));
    for_each_tensor(cp.params, [&](std::string_view name, std::span<double> values) {
        for (double& v : values) v = binary::read_le<double>(in, std::string(name).c_str());
    });
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("checkpoint: trailing bytes");
    return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace nrpa
