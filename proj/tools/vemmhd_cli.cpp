// vemmhd command-line driver.
//
//   vemmhd mesh gen --mesh dtp:4 -o dtp4.mesh
//   vemmhd mesh check dtp4.mesh --rho 0.1
//   vemmhd mesh info --mesh cube:4
//   vemmhd run --mesh cube:4 --scheme 1 --dt 0.1 --case ms1 --out results
//   vemmhd convergence --plan temporal1.cfg
//   vemmhd tables --config div.cfg --mesh cube:4 --mesh dtp:4
//
// Exit status: 0 success, 1 invalid input or failed validation, 2 solver failure.

#include "vemmhd/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace vemmhd;
namespace fs = std::filesystem;

namespace {

struct ValidationFailure : Error {
  using Error::Error;
};

std::ofstream open_output(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(dir / name);
  if (!out) throw ConfigError("out.dir: cannot write " + (dir / name).string());
  return out;
}

/// Flags that override configuration keys; empty strings mean "not given".
struct Overrides {
  std::string config, mesh, dt, scheme, case_name, T, Re, kappa, B, k_J, out, workers;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "configuration file (key = value)");
    app->add_option("--mesh", mesh, "cube:N | dtp:N[:jitter[:seed]] | file:PATH");
    app->add_option("--dt", dt, "time step");
    app->add_option("--scheme", scheme, "1 or 2");
    app->add_option("--case", case_name, "ms1 | ms2 | decay");
    app->add_option("--T", T, "final time");
    app->add_option("--Re", Re, "Reynolds number");
    app->add_option("--kappa", kappa, "coupling number");
    app->add_option("--B", B, "applied field: 'bx, by, bz' or 'expr: ..., ..., ...'");
    app->add_option("--kJ", k_J, "current degree (0 or 1)");
    app->add_option("--out", out, "output directory");
    app->add_option("--workers", workers, "worker threads");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    const std::pair<const char*, const std::string*> pairs[] = {
        {"dt", &dt},     {"scheme", &scheme}, {"case", &case_name}, {"T", &T},       {"Re", &Re},
        {"kappa", &kappa}, {"B", &B},         {"k_J", &k_J},        {"out.dir", &out}, {"workers", &workers}};
    for (const auto& [key, value] : pairs)
      if (!value->empty()) apply_setting(cfg, key, *value);
    if (!mesh.empty()) cfg.mesh = parse_mesh_spec(mesh);
    validate(cfg);
    return cfg;
  }
};

PolyMesh mesh_from(const std::string& spec_or_path) {
  if (spec_or_path.rfind("cube:", 0) == 0 || spec_or_path.rfind("dtp:", 0) == 0 ||
      spec_or_path.rfind("file:", 0) == 0)
    return build_mesh(parse_mesh_spec(spec_or_path));
  return import_mesh(spec_or_path);
}

int cmd_mesh_gen(const std::string& spec, const std::string& output) {
  const PolyMesh mesh = build_mesh(parse_mesh_spec(spec));
  export_mesh(mesh, output);
  std::cout << "wrote " << output << ": " << mesh.num_cells() << " cells, h = " << mesh_size(mesh) << "\n";
  return 0;
}

int cmd_mesh_check(const std::string& source, double rho) {
  const PolyMesh mesh = mesh_from(source);
  const auto report = regularity_report(mesh, rho);
  int flagged = 0;
  for (std::size_t c = 0; c < report.size(); ++c)
    if (report[c].flagged) {
      ++flagged;
      std::cout << "cell " << c << " below rho: centroid_to_face " << report[c].centroid_to_face
                << ", face_inradius " << report[c].face_inradius << ", min_edge " << report[c].min_edge << "\n";
    }
  std::cout << mesh.num_cells() << " cells, " << flagged << " flagged at rho = " << rho << "\n";
  if (flagged) throw ValidationFailure("mesh check: " + std::to_string(flagged) + " cells flagged");
  return 0;
}

int cmd_mesh_info(const std::string& source) {
  const PolyMesh mesh = mesh_from(source);
  std::size_t boundary = mesh.boundary_faces().size();
  std::cout << "vertices " << mesh.num_vertices() << "\nedges " << mesh.num_edges() << "\nfaces " << mesh.num_faces()
            << "\nboundary_faces " << boundary << "\ncells " << mesh.num_cells() << "\nvolume "
            << mesh.domain_volume() << "\nh " << mesh_size(mesh) << "\n";
  return 0;
}

int cmd_run(const RunConfig& cfg) {
  const PolyMesh mesh = build_mesh(cfg.mesh);
  const SimulationResult res = simulate(cfg, mesh, cfg.workers);
  const fs::path dir(cfg.out_dir);
  {
    auto out = open_output(dir, "energy.csv");
    out << "# " << metadata(cfg) << " dt=" << cfg.dt << "\n";
    write_energy_csv(out, res.run.trace);
  }
  {
    auto out = open_output(dir, "errors.csv");
    write_errors_csv(out, {res.errors}, metadata(cfg));
  }
  const ErrorReport& e = res.errors;
  std::cout << "t = " << e.t << ": e_u " << e.e_u << ", e_J " << e.e_J << ", e_p " << e.e_p << ", e_phi " << e.e_phi
            << ", e_s " << e.e_s << ", div_u " << e.div_u << ", div_J " << e.div_J << "\n";
  return 0;
}

int cmd_convergence(const RunConfig& cfg) {
  const StudyResult s = convergence_study(cfg);
  const fs::path dir(cfg.out_dir);
  std::vector<ErrorReport> rows;
  for (const auto& r : s.rows) rows.push_back(r.errors);
  {
    auto out = open_output(dir, "convergence.csv");
    write_errors_csv(out, rows, metadata(cfg) + " mode=" + s.mode);
  }
  {
    auto out = open_output(dir, "slopes.csv");
    write_slopes_csv(out, s, metadata(cfg) + " mode=" + s.mode);
  }
  {
    auto out = open_output(dir, "convergence.dat");
    write_gnuplot_data(out, s, metadata(cfg) + " mode=" + s.mode);
  }
  std::cout << "slopes (" << s.mode << "): e_u " << s.slope_u << ", e_J " << s.slope_J << ", e_p " << s.slope_p
            << ", e_phi " << s.slope_phi << ", e_s " << s.slope_s << "\n";
  return 0;
}

int cmd_tables(const RunConfig& cfg, const std::vector<std::string>& mesh_specs, double tol) {
  std::vector<std::pair<std::string, MeshSpec>> meshes;
  if (mesh_specs.empty()) meshes.emplace_back(cfg.mesh.type, cfg.mesh);
  for (const auto& m : mesh_specs) meshes.emplace_back(m, parse_mesh_spec(m));
  RunConfig c = cfg;
  if (c.plan_dt.empty()) c.plan_dt = {c.dt};
  const auto rows = divergence_table(c, meshes, tol);
  {
    auto out = open_output(fs::path(cfg.out_dir), "divergence.csv");
    write_divergence_csv(out, rows, metadata(cfg));
  }
  int bad = 0;
  for (const auto& r : rows) {
    std::cout << r.mesh << " dt " << r.dt << ": div_u " << r.div_u << ", div_J " << r.div_J << "\n";
    if (r.div_u > tol || r.div_J > tol) {
      ++bad;
      std::cout << "  offending cells:";
      for (int cell : r.offending_cells) std::cout << ' ' << cell;
      std::cout << "\n";
    }
  }
  if (bad) {
    std::ostringstream msg;
    msg << "divergence above " << tol << " in " << bad << " runs";
    throw ValidationFailure(msg.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual element solver for inductionless MHD with SAV time stepping"};
  app.require_subcommand(1);

  auto* mesh_cmd = app.add_subcommand("mesh", "generate, check or describe meshes");
  mesh_cmd->require_subcommand(1);
  std::string gen_spec, gen_out = "mesh.mesh", check_src, info_src;
  double rho = 0.1;
  auto* gen = mesh_cmd->add_subcommand("gen", "write a generated mesh");
  gen->add_option("--mesh", gen_spec, "cube:N | dtp:N[:jitter[:seed]]")->required();
  gen->add_option("-o,--output", gen_out, "output file");
  auto* check = mesh_cmd->add_subcommand("check", "validate a mesh and report regularity");
  check->add_option("source", check_src, "mesh file or spec")->required();
  check->add_option("--rho", rho, "regularity threshold");
  auto* info = mesh_cmd->add_subcommand("info", "print mesh statistics");
  info->add_option("source", info_src, "mesh file or spec");
  info->add_option("--mesh", info_src, "mesh spec");

  Overrides run_ov, conv_ov, tab_ov;
  auto* run_cmd = app.add_subcommand("run", "single simulation; writes energy.csv and errors.csv");
  run_ov.add_to(run_cmd);
  auto* conv_cmd = app.add_subcommand("convergence", "convergence study; writes convergence.csv, slopes.csv");
  conv_ov.add_to(conv_cmd);
  conv_cmd->get_option("--config")->description("plan file");
  conv_cmd->add_option("--plan", conv_ov.config, "plan file (alias of --config)");
  auto* tab_cmd = app.add_subcommand("tables", "divergence table over meshes and plan.dt");
  std::vector<std::string> tab_meshes;
  double tol = 1e-11;
  tab_cmd->add_option("--config", tab_ov.config, "configuration file");
  tab_cmd->add_option("--mesh", tab_meshes, "mesh spec (repeatable)");
  tab_cmd->add_option("--out", tab_ov.out, "output directory");
  tab_cmd->add_option("--tol", tol, "divergence tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mesh_cmd->parsed()) {
      if (gen->parsed()) return cmd_mesh_gen(gen_spec, gen_out);
      if (check->parsed()) return cmd_mesh_check(check_src, rho);
      if (info_src.empty()) throw ConfigError("mesh info: give a mesh file or --mesh spec");
      return cmd_mesh_info(info_src);
    }
    if (run_cmd->parsed()) return cmd_run(run_ov.resolve());
    if (conv_cmd->parsed()) return cmd_convergence(conv_ov.resolve());
    if (tab_cmd->parsed()) return cmd_tables(tab_ov.resolve(), tab_meshes, tol);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const GeometryError& e) {
    std::cerr << "geometry error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationFailure& e) {
    std::cerr << "validation failed: " << e.what() << "\n";
    return 1;
  } catch (const IndexError& e) {
    std::cerr << "index error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
