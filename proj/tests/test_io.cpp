#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pipeline_fixture.hpp"
#include "sed/config_json.hpp"
#include "sed/dataset.hpp"
#include "sed/image_io.hpp"
#include "sed/params.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(name) { fs::create_directories(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("PPM round trip is byte-exact") {
    TempDir dir("io_ppm");
    sed::ImageU8 img;
    img.h = 3;
    img.w = 5;
    sed::SplitMix64 rng(1);
    img.rgb.resize(45);
    for (auto& v : img.rgb) v = static_cast<uint8_t>(rng.below(256));
    const auto path = (dir.path / "img.ppm").string();
    sed::write_ppm(path, img);
    auto back = sed::read_ppm(path);
    CHECK(back.h == 3);
    CHECK(back.w == 5);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("PPM reader handles header comments and rejects truncation") {
    TempDir dir("io_ppm2");
    const auto path = (dir.path / "c.ppm").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "P6\n# a comment line\n2 1\n# another\n255\n";
        os.write("\x01\x02\x03\x04\x05\x06", 6);
    }
    auto img = sed::read_ppm(path);
    CHECK(img.w == 2);
    CHECK(img.h == 1);
    CHECK(img.rgb == std::vector<uint8_t>{1, 2, 3, 4, 5, 6});
    {
        std::ofstream os(path, std::ios::binary);
        os << "P6\n2 2\n255\n";
        os.write("\x01\x02\x03", 3);
    }
    CHECK_THROWS_WITH_AS(sed::read_ppm(path), doctest::Contains("truncated"), sed::IoError);
}

TEST_CASE("PGM and SEDL label maps round trip") {
    TempDir dir("io_lab");
    sed::LabelMap lm;
    lm.h = 2;
    lm.w = 3;
    lm.v = {0, 5, 254, 1, 2, 3};
    const auto pgm = (dir.path / "l.pgm").string();
    sed::write_pgm(pgm, lm);
    CHECK(sed::read_label_map(pgm).v == lm.v);

    lm.v = {0, 500, 65000, sed::kIgnoreLabel, 2, 3};
    const auto sedl = (dir.path / "l.sedl").string();
    sed::write_sedl(sedl, lm);
    CHECK(sed::read_label_map(sedl).v == lm.v);
    CHECK_THROWS_AS(sed::write_pgm((dir.path / "bad.pgm").string(), lm), sed::IoError);
}

TEST_CASE("checkpoint round trip restores bit-identical f32 parameters") {
    TempDir dir("io_ckpt");
    auto cfg = fixture::tiny_config();
    auto a = sed::init_model<float>(cfg, 3);
    const auto path = (dir.path / "m.sedc").string();
    std::vector<sed::CheckpointExtra> extras = {
        {"opt/step", {1}, {42.0f}},
    };
    sed::save_checkpoint(path, a.params, extras);

    auto b = sed::init_model<float>(cfg, 99);  // different init, same shapes
    auto got = sed::load_checkpoint(path, b.params);
    REQUIRE(got.size() == 1);
    CHECK(got[0].name == "opt/step");
    CHECK(got[0].values[0] == 42.0f);
    for (size_t i = 0; i < a.params.size(); ++i)
        CHECK(a.params.entries()[i].tensor.values() == b.params.entries()[i].tensor.values());

    // re-saving the loaded state reproduces the same bytes
    sed::save_checkpoint((dir.path / "m2.sedc").string(), b.params, extras);
    CHECK(slurp(dir.path / "m.sedc") == slurp(dir.path / "m2.sedc"));
}

TEST_CASE("checkpoint shape mismatches name the parameter and both shapes") {
    TempDir dir("io_ckpt2");
    auto small = fixture::tiny_config();
    auto big = fixture::tiny_config(/*dim=*/8);
    auto a = sed::init_model<float>(small, 1);
    const auto path = (dir.path / "m.sedc").string();
    sed::save_checkpoint(path, a.params);
    auto b = sed::init_model<float>(big, 1);
    CHECK_THROWS_WITH_AS(sed::load_checkpoint(path, b.params), doctest::Contains("dec/"),
                         sed::IoError);
}

TEST_CASE("checkpoints with missing parameters are rejected") {
    TempDir dir("io_ckpt3");
    sed::ParamSet<float> partial;
    partial.add("only/one", sed::ParamGroup::decoder, sed::Tensor<float>({2}, 1.0f, true));
    const auto path = (dir.path / "m.sedc").string();
    sed::save_checkpoint(path, partial);
    auto full = sed::init_model<float>(fixture::tiny_config(), 1);
    CHECK_THROWS_WITH_AS(sed::load_checkpoint(path, full.params), doctest::Contains("missing"),
                         sed::IoError);
}

TEST_CASE("synthetic dataset writes and loads through the directory layout") {
    TempDir dir("io_data");
    sed::SyntheticSpec spec;
    spec.images = 3;
    spec.size = 32;
    spec.categories = 4;
    auto data = sed::make_synthetic_dataset(spec);
    sed::write_dataset(dir.path.string(), data);
    auto back = sed::load_dataset(dir.path.string());
    REQUIRE(back.samples.size() == 3);
    CHECK(back.vocab.names == data.vocab.names);
    CHECK(back.templates == data.templates);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.samples[i].image.rgb == data.samples[i].image.rgb);
        CHECK(back.samples[i].label.v == data.samples[i].label.v);
    }
}

TEST_CASE("a large-vocabulary dataset falls back to SEDL labels") {
    TempDir dir("io_data2");
    sed::SyntheticSpec spec;
    spec.images = 1;
    spec.size = 32;
    spec.categories = 300;
    spec.grid = 4;
    auto data = sed::make_synthetic_dataset(spec);
    sed::write_dataset(dir.path.string(), data);
    CHECK(fs::exists(dir.path / "labels" / "0000.sedl"));
    auto back = sed::load_dataset(dir.path.string());
    CHECK(back.samples[0].label.v == data.samples[0].label.v);
}

// --- config ------------------------------------------------------------------------

TEST_CASE("run config JSON round-trips and mirrors field names") {
    sed::RunConfig cfg;
    cfg.model.encoder.stage_widths = {8, 16, 32, 64};
    cfg.model.gfd.fam.dw_kernel = 7;
    cfg.model.gfd.layers = 2;
    cfg.train.lambda = 0.02;
    cfg.model.encoder.encoder_lr_scale = 0.02;
    cfg.cer.enabled = true;
    cfg.cer.k = 8;
    auto text = sed::run_config_to_json(cfg);
    sed::RunConfig back;
    sed::apply_run_config_json(back, text, "inline");
    CHECK(back.model.encoder.stage_widths == cfg.model.encoder.stage_widths);
    CHECK(back.model.gfd.fam.dw_kernel == 7);
    CHECK(back.model.gfd.layers == 2);
    CHECK(back.train.lambda == 0.02);
    CHECK(back.cer.k == 8);
    CHECK(back.cer.enabled);
}

TEST_CASE("cer.k accepts integers or the string all") {
    sed::RunConfig cfg;
    sed::apply_run_config_json(cfg, R"({"cer": {"enabled": true, "k": "all"}})", "inline");
    CHECK(cfg.cer.is_all());
    sed::apply_run_config_json(cfg, R"({"cer": {"k": 4}})", "inline");
    CHECK(cfg.cer.k == 4);
    CHECK_THROWS_AS(
        sed::apply_run_config_json(cfg, R"({"cer": {"k": "some"}})", "inline"),
        std::invalid_argument);
}

TEST_CASE("lambda and encoder_lr_scale stay in lockstep") {
    sed::RunConfig cfg;
    sed::apply_run_config_json(cfg, R"({"train": {"lambda": 0.05}})", "inline");
    CHECK(cfg.model.encoder.encoder_lr_scale == 0.05);
    sed::RunConfig cfg2;
    sed::apply_run_config_json(cfg2, R"({"encoder": {"encoder_lr_scale": 0.02}})", "inline");
    CHECK(cfg2.train.lambda == 0.02);
    sed::RunConfig cfg3;
    CHECK_THROWS_AS(sed::apply_run_config_json(
                        cfg3,
                        R"({"train": {"lambda": 0.05}, "encoder": {"encoder_lr_scale": 0.02}})",
                        "inline"),
                    std::invalid_argument);
}

TEST_CASE("malformed config files report the origin") {
    sed::RunConfig cfg;
    CHECK_THROWS_AS(sed::apply_run_config_json(cfg, "{nope", "broken.json"), sed::IoError);
}
