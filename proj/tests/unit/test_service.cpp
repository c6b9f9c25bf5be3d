#include <gtest/gtest.h>

#include "oracles.hpp"
#include "service_harness.hpp"
#include "snst/checkpoint.hpp"
#include "snst/edit.hpp"

using namespace snst;
using nlohmann::json;

class Service : public ::testing::Test {
 protected:
  oracle::TempDir dir{"service"};
  ImagePlane content = oracle::textured_image(48, 64, 12);
  std::unique_ptr<harness::LiveService> live;

  void SetUp() override {
    ::unsetenv(kUpsampleEndpointEnv);
    std::filesystem::create_directories(dir / "models");
    auto m = oracle::random_model(ArchConfig::tiny(), 21);
    ModelMeta meta = m.meta();
    meta.style_name = "test brush";
    meta.style_image = oracle::textured_image(24, 24, 1);
    save_checkpoint(StyleModel(m.weights(), meta), dir / "models" / "brush.ckpt");
    write_file(dir / "models" / "broken.ckpt", std::vector<std::uint8_t>{1, 2, 3});
    ServiceConfig cfg;
    cfg.models_dir = dir / "models";
    cfg.work_dir = dir / "work";
    live = std::make_unique<harness::LiveService>(cfg);
  }

  StyleModel model() const { return load_checkpoint(dir / "models" / "brush.ckpt"); }

  std::string new_session(const ImagePlane& img) {
    auto r = live->client().Post("/sessions", harness::png_string(img), "image/png");
    EXPECT_EQ(r->status, 201);
    return harness::body_json(r).at("session_id");
  }

  httplib::Result post(const std::string& path, const json& body) { return live->post_json(path, body); }
};

TEST_F(Service, ListsStylesAndSkipsBrokenFiles) {
  auto r = live->client().Get("/styles");
  ASSERT_EQ(r->status, 200);
  const auto j = harness::body_json(r);
  ASSERT_EQ(j.at("styles").size(), 1u);
  EXPECT_EQ(j["styles"][0]["id"], "brush");
  EXPECT_EQ(j["styles"][0]["style_name"], "test brush");
  EXPECT_TRUE(j["styles"][0]["has_style_image"].get<bool>());
}

TEST(ServiceConfigTest, EmptyModelDirIsAnEmptyListAndMissingDirFails) {
  oracle::TempDir dir("svc-empty");
  std::filesystem::create_directories(dir / "models");
  harness::LiveService live({dir / "models", 1024, 25'000'000, std::nullopt, dir / "work", kDefaultLevelBudgetBytes});
  auto r = live.client().Get("/styles");
  ASSERT_EQ(r->status, 200);
  EXPECT_TRUE(harness::body_json(r).at("styles").empty());
  try {
    EditService({dir / "absent", 1024, 25'000'000, std::nullopt, dir / "work", kDefaultLevelBudgetBytes});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
}

TEST_F(Service, SessionCreation) {
  auto r = live->client().Post("/sessions", harness::png_string(content), "image/png");
  ASSERT_EQ(r->status, 201);
  const auto j = harness::body_json(r);
  EXPECT_EQ(j.at("height"), 48);
  EXPECT_EQ(j.at("width"), 64);

  httplib::MultipartFormDataItems items{{"content", harness::png_string(content), "c.png", "image/png"}};
  EXPECT_EQ(live->client().Post("/sessions", items)->status, 201);

  auto big = live->client().Post("/sessions", harness::png_header_only(7746, 7746), "image/png");
  EXPECT_EQ(big->status, 413);
  EXPECT_EQ(harness::body_json(big).at("error"), "validation");

  auto junk = live->client().Post("/sessions", std::string(100, 'x'), "image/png");
  EXPECT_EQ(junk->status, 400);
  auto tiny = live->client().Post("/sessions", harness::png_string(oracle::textured_image(8, 8, 1)), "image/png");
  EXPECT_EQ(tiny->status, 400);
  EXPECT_EQ(live->client().Get("/sessions/nope")->status, 404);
}

TEST(ServicePreviewCap, LongSideIsCapped) {
  oracle::TempDir dir("svc-cap");
  std::filesystem::create_directories(dir / "models");
  harness::LiveService live({dir / "models", 32, 25'000'000, std::nullopt, dir / "work", kDefaultLevelBudgetBytes});
  auto r = live.client().Post("/sessions", harness::png_string(oracle::textured_image(48, 64, 2)), "image/png");
  ASSERT_EQ(r->status, 201);
  EXPECT_EQ(harness::body_json(r).at("width"), 32);
  EXPECT_EQ(harness::body_json(r).at("height"), 24);
}

TEST_F(Service, StylizeValidatesAndIsDeterministic) {
  const auto id = new_session(content);
  auto bad = post("/sessions/" + id + "/stylize", {{"style_id", "brush"}, {"lambda_s", 12}, {"lambda_i", -1}, {"tau", 0}});
  ASSERT_EQ(bad->status, 422);
  const auto v = harness::body_json(bad).at("violations");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0]["field"], "lambda_s");
  EXPECT_NE(v[0]["message"].get<std::string>().find("[1, 8]"), std::string::npos);
  EXPECT_EQ(v[1]["field"], "lambda_i");
  EXPECT_EQ(post("/sessions/" + id + "/stylize", {{"style_id", "brush"}, {"lambda_s", "big"}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/stylize", {{"style_id", "ghost"}})->status, 404);
  EXPECT_EQ(live->client().Post("/sessions/" + id + "/stylize", "{not json", "application/json")->status, 400);

  const json req = {{"style_id", "brush"}, {"lambda_s", 2}, {"lambda_i", 0.5}, {"tau", 30}};
  auto a = post("/sessions/" + id + "/stylize", req);
  auto b = post("/sessions/" + id + "/stylize", req);
  ASSERT_EQ(a->status, 200);
  EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(a->body, b->body);
  const auto img = harness::decode_body(a);
  EXPECT_EQ(extent_of(img), extent_of(content));
  const auto want = stylize(model(), content, StrokeParams::make(2, 0.5, 30));
  EXPECT_LE(max_abs_diff(img, want), 0.5f / 255 + 1e-6f);
}

TEST_F(Service, BlendBeforeLevelsIsASequencingError) {
  const auto id = new_session(content);
  auto r = post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}});
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(harness::body_json(r).at("error"), "sequencing");
  EXPECT_EQ(live->client().Get("/sessions/" + id + "/levels/0")->status, 409);
  EXPECT_EQ(post("/sessions/" + id + "/export", {{"scale", 1}})->status, 409);
}

TEST_F(Service, LevelsThenBlend) {
  const auto id = new_session(content);
  const std::vector<double> levels{1, 2, 4};
  auto bad = post("/sessions/" + id + "/levels", {{"style_id", "brush"}, {"level_values", {2, 2}}});
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/levels", {{"style_id", "brush"}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/levels", {{"level_values", levels}})->status, 422);  // no style yet

  auto r = post("/sessions/" + id + "/levels", {{"style_id", "brush"}, {"level_values", levels}, {"lambda_i", 0.7}});
  ASSERT_EQ(r->status, 200);
  const auto j = harness::body_json(r);
  ASSERT_EQ(j.at("levels").size(), 3u);
  auto lvl = live->client().Get(j["levels"][1]["url"].get<std::string>());
  ASSERT_EQ(lvl->status, 200);
  EXPECT_EQ(extent_of(harness::decode_body(lvl)), extent_of(content));
  EXPECT_EQ(live->client().Get("/sessions/" + id + "/levels/7")->status, 404);

  const auto before = encoder_invocations();
  auto prev = post("/sessions/" + id + "/blend", {{"mode", "preview"}, {"level", 1}});
  ASSERT_EQ(prev->status, 200);
  EXPECT_EQ(encoder_invocations(), before);

  auto fin = post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 1}});
  ASSERT_EQ(fin->status, 200);
  const auto want = stylize(model(), content, StrokeParams::make(2, 0.7, 0));
  EXPECT_LE(max_abs_diff(harness::decode_body(fin), want), 0.5f / 255 + 1e-5f);
  EXPECT_EQ(prev->body, fin->body);

  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "draft"}, {"level", 1}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 5}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level_values", {1, 2}}})->status, 409);
}

TEST_F(Service, MaskUploadsAndShapeMismatch) {
  const auto id = new_session(content);
  ASSERT_EQ(post("/sessions/" + id + "/levels", {{"style_id", "brush"}, {"level_values", {1, 4}}})->status, 200);
  oracle::TempDir tmp("svc-mask");
  std::vector<std::uint8_t> labels(content.pixel_count());
  for (int y = 0; y < content.height; ++y)
    for (int x = 0; x < content.width; ++x) labels[static_cast<std::size_t>(y) * content.width + x] = x >= 32;
  save_label_mask(labels, extent_of(content), tmp / "m.png");
  const auto png = read_file(tmp / "m.png");
  httplib::MultipartFormDataItems items{{"mode", "preview", "", ""},
                                        {"mask", std::string(png.begin(), png.end()), "m.png", "image/png"}};
  auto r = live->client().Post("/sessions/" + id + "/blend", items);
  ASSERT_EQ(r->status, 200);

  const auto mask = LevelMask::from_labels(labels, 2, content.height, content.width);
  save_plane_masks(mask, tmp / "m.tif");
  const auto tif = read_file(tmp / "m.tif");
  httplib::MultipartFormDataItems titems{{"mode", "preview", "", ""},
                                         {"mask", std::string(tif.begin(), tif.end()), "m.tif", "image/tiff"}};
  auto t = live->client().Post("/sessions/" + id + "/blend", titems);
  ASSERT_EQ(t->status, 200);
  EXPECT_EQ(t->body, r->body);

  save_label_mask(std::vector<std::uint8_t>(16 * 16, 0), {16, 16}, tmp / "small.png");
  const auto small = read_file(tmp / "small.png");
  httplib::MultipartFormDataItems sitems{{"mode", "final", "", ""},
                                         {"mask", std::string(small.begin(), small.end()), "s.png", "image/png"}};
  EXPECT_EQ(live->client().Post("/sessions/" + id + "/blend", sitems)->status, 422);
}

TEST_F(Service, ChangedTauInvalidatesLevels) {
  const auto id = new_session(content);
  ASSERT_EQ(post("/sessions/" + id + "/levels", {{"style_id", "brush"}, {"level_values", {1, 2}}, {"tau", 0}})->status,
            200);
  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}})->status, 200);
  auto stale = post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}, {"tau", 45}});
  EXPECT_EQ(stale->status, 409);
  EXPECT_EQ(harness::body_json(live->client().Get("/sessions/" + id)).at("levels_fresh"), false);
  // a global stylize with a different intensity also invalidates
  ASSERT_EQ(post("/sessions/" + id + "/levels", {{"level_values", {1, 2}}, {"tau", 45}})->status, 200);
  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}})->status, 200);
  ASSERT_EQ(post("/sessions/" + id + "/stylize", {{"style_id", "brush"}, {"lambda_i", 2.0}, {"tau", 45}})->status, 200);
  EXPECT_EQ(post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}})->status, 409);
}

TEST_F(Service, ExportJobs) {
  const auto id = new_session(content);
  ASSERT_EQ(post("/sessions/" + id + "/levels", {{"style_id", "brush"}, {"level_values", {2}}})->status, 200);
  auto fin = post("/sessions/" + id + "/blend", {{"mode", "final"}, {"level", 0}});
  ASSERT_EQ(fin->status, 200);

  EXPECT_EQ(post("/sessions/" + id + "/export", {{"scale", 0.5}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/export", {{"scale", 2}, {"backend", "gpu"}})->status, 422);
  EXPECT_EQ(post("/sessions/" + id + "/export", {{"scale", 2}, {"backend", "remote"}})->status, 503);

  auto one = post("/sessions/" + id + "/export", {{"scale", 1}, {"backend", "local"}});
  ASSERT_EQ(one->status, 202);
  const auto j = harness::body_json(one);
  EXPECT_EQ(j.at("state"), "done");
  auto res = live->client().Get(j.at("result_url").get<std::string>());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(harness::decode_body(res), harness::decode_body(fin));

  auto up = post("/sessions/" + id + "/export", {{"scale", 3.125}});
  ASSERT_EQ(up->status, 202);
  const auto job = harness::body_json(up);
  auto st = live->client().Get(job.at("status_url").get<std::string>());
  ASSERT_EQ(st->status, 200);
  EXPECT_EQ(harness::body_json(st).at("height"), 150);
  EXPECT_EQ(harness::body_json(st).at("width"), 200);
  EXPECT_EQ(live->client().Get("/jobs/unknown")->status, 404);
}

TEST_F(Service, StatsAndUnknownRoutes) {
  new_session(content);
  auto r = live->client().Get("/stats");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(harness::body_json(r).at("sessions"), 1);
  auto nf = live->client().Get("/nowhere");
  EXPECT_EQ(nf->status, 404);
  EXPECT_EQ(harness::body_json(nf).at("error"), "not_found");
}

TEST(HttpStatus, ErrorMapping) {
  EXPECT_EQ(http_status_for(ErrorKind::parameter), 422);
  EXPECT_EQ(http_status_for(ErrorKind::shape), 422);
  EXPECT_EQ(http_status_for(ErrorKind::sequencing), 409);
  EXPECT_EQ(http_status_for(ErrorKind::not_found), 404);
  EXPECT_EQ(http_status_for(ErrorKind::configuration), 503);
  EXPECT_EQ(http_status_for(ErrorKind::transport), 502);
  EXPECT_EQ(http_status_for(ErrorKind::input), 400);
}
