#include <torch/torch.h>

#include "support.hpp"
#include "thermogen/checkpoint.hpp"
#include "thermogen/config.hpp"

#include "doctest_wrap.hpp"

using namespace thermogen;
using namespace thermogen::testsupport;

TEST_CASE("key-value config parsing") {
    auto cfg = KeyValueConfig::from_string(
        "# experiment\n"
        "gan.base_channels = 16\n"
        "lr = 1e-4   # inline comment\n"
        "name = toy run\n");
    CHECK(cfg.get_int("gan.base_channels") == 16);
    CHECK(cfg.get_double("lr") == doctest::Approx(1e-4));
    CHECK(cfg.get_string("name") == "toy run");
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(cfg.get_string("missing"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::from_string("no equals sign\n"), ConfigError);
}

TEST_CASE("overrides and digest stability") {
    auto a = KeyValueConfig::from_string("x = 1\ny = 2\n");
    auto b = KeyValueConfig::from_string("y = 2\nx = 1\n");
    CHECK(a.digest() == b.digest());  // order-independent

    b.apply_override("x=3");
    CHECK(a.digest() != b.digest());
    CHECK(b.get_int("x") == 3);
}

TEST_CASE("parameter digest is stable and order-sensitive to content") {
    torch::manual_seed(0);
    torch::nn::Linear a(4, 4), b(4, 4);
    auto da1 = parameter_digest(*a);
    auto da2 = parameter_digest(*a);
    CHECK(da1 == da2);
    CHECK(da1 != parameter_digest(*b));

    torch::NoGradGuard ng;
    a->weight.add_(1e-3);
    CHECK(parameter_digest(*a) != da1);
}

TEST_CASE("atomic archive save leaves no temp file") {
    TempDir dir("archive");
    torch::serialize::OutputArchive ar;
    ar.write("x", torch::ones({3}));
    save_archive_atomic(ar, dir.file("a.pt"));
    CHECK(std::filesystem::exists(dir.file("a.pt")));
    CHECK(!std::filesystem::exists(dir.file("a.pt.tmp")));

    torch::serialize::InputArchive in;
    in.load_from(dir.file("a.pt"));
    torch::Tensor x;
    in.read("x", x);
    CHECK(x.equal(torch::ones({3})));
}
