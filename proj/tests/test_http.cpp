#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "service_fixture.hpp"
#include "xmrc/phantoms.hpp"
#include "xmrc/sampling.hpp"
#include "xmrc/service/http.hpp"

namespace xmrc {
namespace {

using nlohmann::json;

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(ui.path);
    std::ofstream(ui.path / "index.html") << "<!doctype html><title>ui</title>";
    auto cfg = testing::test_config(dir.path, 2);
    cfg.max_upload_bytes = 8 << 20;
    cfg.ui_dir = ui.path;
    svc = std::make_unique<service::Service>(cfg);
    http = std::make_unique<service::HttpServer>(*svc);
    const int port = http->bind("127.0.0.1", 0);
    thread = std::thread([this] { http->run(); });
    http->wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(30, 0);
  }

  void TearDown() override {
    http->stop();
    thread.join();
    http.reset();
    svc.reset();
  }

  std::string login(const std::string& user = "EMBC", const std::string& pass = "EMBC2021") {
    const auto res = client->Post("/api/login", json{{"username", user}, {"password", pass}}.dump(),
                                  "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    return json::parse(res->body).at("token");
  }

  httplib::Headers auth(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

  std::string upload(const std::string& token, const std::vector<std::uint8_t>& bytes) {
    const auto res = client->Post("/api/data", auth(token), reinterpret_cast<const char*>(bytes.data()),
                                  bytes.size(), "application/octet-stream");
    EXPECT_EQ(res->status, 201) << res->body;
    return json::parse(res->body).at("data_id");
  }

  static std::string code_of(const httplib::Result& res) { return json::parse(res->body).at("code"); }

  testing::TempDir dir;
  testing::TempDir ui;
  std::unique_ptr<service::Service> svc;
  std::unique_ptr<service::HttpServer> http;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
};

TEST_F(HttpTest, LoginRejectsBadCredentials) {
  const auto res = client->Post("/api/login", R"({"username":"EMBC","password":"x"})", "application/json");
  EXPECT_EQ(res->status, 401);
  EXPECT_EQ(code_of(res), "Unauthorized");
  EXPECT_EQ(client->Post("/api/login", "not json", "application/json")->status, 400);
  EXPECT_EQ(login().size(), 32u);
}

// Every route other than login, with no token, a malformed header, and an
// unknown token.
TEST_F(HttpTest, EveryRouteRequiresToken) {
  const std::string id(32, 'a');
  const std::vector<std::pair<std::string, std::string>> routes{
      {"POST", "/api/data"},
      {"GET", "/api/data/" + id},
      {"GET", "/api/data/" + id + "/raw"},
      {"DELETE", "/api/data/" + id},
      {"POST", "/api/jobs"},
      {"GET", "/api/jobs/" + id},
      {"GET", "/api/jobs/" + id + "/result"},
      {"GET", "/api/jobs/" + id + "/errormap"},
      {"DELETE", "/api/jobs/" + id},
      {"GET", "/api/demo"},
      {"GET", "/api/demo/phantom.xmrc"},
  };
  const std::vector<httplib::Headers> bad{
      {}, {{"Authorization", "Basic Zm9vOmJhcg=="}}, {{"Authorization", "Bearer " + std::string(32, '0')}}};
  for (const auto& [method, path] : routes) {
    for (const auto& headers : bad) {
      httplib::Result res{nullptr, httplib::Error::Unknown};
      if (method == "GET") res = client->Get(path, headers);
      if (method == "POST") res = client->Post(path, headers, "{}", "application/json");
      if (method == "DELETE") res = client->Delete(path, headers);
      ASSERT_TRUE(res) << method << " " << path;
      EXPECT_EQ(res->status, 401) << method << " " << path;
      EXPECT_EQ(code_of(res), "Unauthorized");
    }
  }
}

TEST_F(HttpTest, EndToEndSingleCoil) {
  const auto token = login();
  const Shape s{64, 64};
  const auto truth = shepp_logan(s);
  const auto mask = pseudo_radial_mask(s, {MaskKind::PseudoRadial, 0.3, 0.0, 0});
  const auto y = apply_mask(dft2_centered(truth), mask);
  const auto data_id = upload(token, write_container(y));
  const auto mask_id = upload(token, write_container(mask));
  const auto truth_id = upload(token, write_container(truth));

  auto meta = client->Get("/api/data/" + data_id, auth(token));
  ASSERT_EQ(meta->status, 200);
  EXPECT_EQ(json::parse(meta->body).at("kind"), 2);
  const auto raw = client->Get("/api/data/" + data_id + "/raw", auth(token));
  EXPECT_EQ(raw->body.size(), write_container(y).size());

  const json job_req{{"method", "pfista"},
                     {"data_id", data_id},
                     {"mask_id", mask_id},
                     {"truth_id", truth_id},
                     {"params", {{"lambda", 1e-3}, {"gamma", 1.0}, {"max_iter", 200}}}};
  auto sub = client->Post("/api/jobs", auth(token), job_req.dump(), "application/json");
  ASSERT_EQ(sub->status, 201) << sub->body;
  const std::string job = json::parse(sub->body).at("job_id");

  json view;
  ASSERT_TRUE(testing::eventually([&] {
    view = json::parse(client->Get("/api/jobs/" + job, auth(token))->body);
    return view.at("status") == "done" || view.at("status") == "failed";
  }));
  ASSERT_EQ(view.at("status"), "done") << view.dump();
  EXPECT_TRUE(view.at("rlne").is_number());
  EXPECT_FALSE(view.contains("seq"));

  const auto result = client->Get("/api/jobs/" + job + "/result", auth(token));
  ASSERT_EQ(result->status, 200);
  EXPECT_EQ(result->get_header_value("Content-Type"), "application/octet-stream");
  const std::vector<std::uint8_t> bytes(result->body.begin(), result->body.end());
  const auto direct = pfista_single(read_container_as<KSpaceGrid>(write_container(y)), mask, SolverParams{});
  EXPECT_EQ(bytes, write_container(direct.image));

  const auto pgm = client->Get("/api/jobs/" + job + "/errormap", auth(token));
  ASSERT_EQ(pgm->status, 200);
  EXPECT_EQ(pgm->body.substr(0, 3), "P5\n");

  EXPECT_EQ(client->Delete("/api/data/" + data_id, auth(token))->status, 204);
  const auto gone = client->Get("/api/data/" + data_id, auth(token));
  EXPECT_EQ(gone->status, 404);
  EXPECT_EQ(code_of(gone), "UnknownDataId");
  EXPECT_EQ(client->Delete("/api/data/" + data_id, auth(token))->status, 404);

  EXPECT_EQ(client->Delete("/api/jobs/" + job, auth(token))->status, 204);
  const auto job_gone = client->Get("/api/jobs/" + job + "/result", auth(token));
  EXPECT_EQ(job_gone->status, 404);
  EXPECT_EQ(code_of(job_gone), "UnknownJob");
}

TEST_F(HttpTest, SubmitErrorsMapToStatusCodes) {
  const auto token = login();
  const Shape s{32, 32};
  const auto mask_id = upload(token, write_container(pseudo_radial_mask(s, {})));
  const auto maps = simulate_coil_maps(s, 2, 0);
  const auto multi = upload(token, write_container(sense_forward(shepp_logan(s), maps, SamplingMask::full(s))));

  const auto post = [&](const json& body) { return client->Post("/api/jobs", auth(token), body.dump(), "application/json"); };
  auto res = post({{"method", "pfista"}, {"data_id", multi}, {"mask_id", mask_id}});
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(code_of(res), "KindMismatch");
  res = post({{"method", "pfista_parallel"}, {"data_id", multi}, {"mask_id", mask_id}, {"params", {{"gamma", 2}}}});
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(code_of(res), "InvalidParams");
  res = post({{"method", "pfista_parallel"}, {"data_id", multi}, {"mask_id", mask_id}});
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(code_of(res), "MissingACS");
  res = post({{"method", "pfista"}, {"data_id", "nope"}, {"mask_id", mask_id}});
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(code_of(res), "UnknownDataId");
  res = post({{"method", "magic"}, {"data_id", multi}, {"mask_id", mask_id}});
  EXPECT_EQ(code_of(res), "InvalidParams");
  res = post({{"method", "pfista"}, {"data_id", multi}, {"mask_id", mask_id}, {"bogus", 1}});
  EXPECT_EQ(code_of(res), "InvalidParams");
  res = post({{"method", "pfista"}, {"data_id", multi}, {"mask_id", mask_id}, {"params", {{"lamda", 1}}}});
  EXPECT_EQ(code_of(res), "InvalidParams");
}

TEST_F(HttpTest, UploadErrors) {
  const auto token = login();
  auto res = client->Post("/api/data", auth(token), "XXXXnot a container", "application/octet-stream");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(code_of(res), "MalformedContainer");
  EXPECT_NE(json::parse(res->body).at("message").get<std::string>().find("BadMagic"), std::string::npos);

  const std::string big((8 << 20) + 1, 'x');
  res = client->Post("/api/data", auth(token), big, "application/octet-stream");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
  EXPECT_EQ(code_of(res), "TooLarge");
}

TEST_F(HttpTest, ForeignResourcesAreUnauthorized) {
  const auto mine = login();
  const auto theirs = login("other", "other-pass");
  const auto id = upload(mine, write_container(SamplingMask::full({8, 8})));
  EXPECT_EQ(client->Get("/api/data/" + id, auth(theirs))->status, 401);
  EXPECT_EQ(client->Delete("/api/data/" + id, auth(theirs))->status, 401);
  EXPECT_EQ(client->Get("/api/data/" + id, auth(mine))->status, 200);
}

TEST_F(HttpTest, NotReadyIsConflict) {
  const auto token = login();
  const Shape s{128, 128};
  const auto mask = pseudo_radial_mask(s, {});
  const auto data = upload(token, write_container(apply_mask(dft2_centered(shepp_logan(s)), mask)));
  const auto mask_id = upload(token, write_container(mask));
  const json req{{"method", "pfista"},
                 {"data_id", data},
                 {"mask_id", mask_id},
                 {"params", {{"tol", 0.0}, {"max_iter", 100000}}}};
  const std::string job = json::parse(client->Post("/api/jobs", auth(token), req.dump(), "application/json")->body)
                              .at("job_id");
  const auto res = client->Get("/api/jobs/" + job + "/result", auth(token));
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(code_of(res), "NotReady");
  EXPECT_EQ(client->Delete("/api/jobs/" + job, auth(token))->status, 204);
}

TEST_F(HttpTest, DemoFixturesListAndDownload) {
  const auto token = login();
  const auto list = client->Get("/api/demo", auth(token));
  ASSERT_EQ(list->status, 200);
  const auto fixtures = json::parse(list->body).at("fixtures");
  EXPECT_EQ(fixtures.size(), 6u);
  for (const auto& f : fixtures) {
    const auto res = client->Get("/api/demo/" + f.at("name").get<std::string>(), auth(token));
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->body.size(), f.at("size_bytes").get<std::size_t>());
    // uploads straight back in
    upload(token, std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
  }
  EXPECT_EQ(client->Get("/api/demo/missing.xmrc", auth(token))->status, 404);
}

TEST_F(HttpTest, ServesStaticUi) {
  const auto res = client->Get("/ui/index.html");
  ASSERT_EQ(res->status, 200);
  EXPECT_NE(res->body.find("<title>ui</title>"), std::string::npos);
  const auto missing = client->Get("/nowhere");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(code_of(missing), "NotFound");
}

}  // namespace
}  // namespace xmrc
