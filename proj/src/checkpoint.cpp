#include "thermogen/checkpoint.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace thermogen {

namespace {

void hash_tensor(Fnv1a64& h, const std::string& name, const torch::Tensor& t) {
    h.update(name);
    auto c = t.detach().cpu().contiguous();
    h.update(c.data_ptr(), c.numel() * c.element_size());
}

}  // namespace

std::string parameter_digest(const torch::nn::Module& module) {
    Fnv1a64 h;
    for (const auto& p : module.named_parameters(/*recurse=*/true))
        hash_tensor(h, p.key(), p.value());
    for (const auto& b : module.named_buffers(/*recurse=*/true))
        hash_tensor(h, b.key(), b.value());
    return h.hex();
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open for digest: " + path);
    Fnv1a64 h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h.update(buf, static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

void save_archive_atomic(torch::serialize::OutputArchive& archive, const std::string& path) {
    auto tmp = path + ".tmp";
    archive.save_to(tmp);
    fs::rename(tmp, path);
}

bool modules_equal(const torch::nn::Module& a, const torch::nn::Module& b) {
    auto pa = a.named_parameters(true), pb = b.named_parameters(true);
    if (pa.size() != pb.size()) return false;
    for (const auto& p : pa) {
        auto* q = pb.find(p.key());
        if (q == nullptr || !p.value().equal(*q)) return false;
    }
    return true;
}

}  // namespace thermogen
