#include "sfkd/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sfkd {

namespace {

std::string hexd(double x) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", x);
    return buf;
}

void write_tensor(std::ostream& out, const std::string& name, const double* data, long rows,
                  long cols) {
    out << "tensor " << name << " " << rows << " " << cols << "\n";
    for (long i = 0; i < rows * cols; ++i) out << hexd(data[i]) << (i % cols == cols - 1 ? '\n' : ' ');
}

void write_mlp(std::ostream& out, const std::string& name, const Mlp& m) {
    out << "mlp " << name << " " << m.layers() << "\n";
    for (int i = 0; i < m.layers(); ++i) {
        write_tensor(out, name + ".W" + std::to_string(i), m.W[i].data(), m.W[i].rows(),
                     m.W[i].cols());
        write_tensor(out, name + ".b" + std::to_string(i), m.b[i].data(), m.b[i].size(), 1);
    }
}

double read_hexd(std::istream& in) {
    std::string tok;
    if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated tensor data");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) throw std::runtime_error("checkpoint: bad float token " + tok);
    return v;
}

Eigen::MatrixXd read_tensor(std::istream& in, const std::string& want) {
    std::string kind, name;
    long rows, cols;
    if (!(in >> kind >> name >> rows >> cols) || kind != "tensor" || name != want)
        throw std::runtime_error("checkpoint: expected tensor " + want);
    Eigen::MatrixXd t(rows, cols);
    for (long i = 0; i < rows * cols; ++i) t.data()[i] = read_hexd(in);
    return t;
}

Mlp read_mlp(std::istream& in, const std::string& want) {
    std::string kind, name;
    int layers;
    if (!(in >> kind >> name >> layers) || kind != "mlp" || name != want)
        throw std::runtime_error("checkpoint: expected mlp " + want);
    Mlp m;
    for (int i = 0; i < layers; ++i) {
        m.W.push_back(read_tensor(in, want + ".W" + std::to_string(i)));
        m.b.push_back(Eigen::VectorXd(read_tensor(in, want + ".b" + std::to_string(i)).col(0)));
    }
    return m;
}

std::vector<int> hidden_dims(const Mlp& m) {
    std::vector<int> h;
    for (int i = 0; i + 1 < m.layers(); ++i) h.push_back(static_cast<int>(m.W[i].rows()));
    return h;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    const SfkdModelConfig& cfg = c.model.cfg;
    out << "sfkd-checkpoint v1\n";
    out << "int r " << cfg.r << "\n";
    out << "int d_e " << cfg.d_e << "\n";
    out << "int fiber_conditioning " << (cfg.fiber_conditioning ? 1 : 0) << "\n";
    out << "int operator_global " << (c.gen.global ? 1 : 0) << "\n";
    out << "scalar beta " << hexd(cfg.beta) << "\n";
    out << "scalar eps0 " << hexd(cfg.eps0) << "\n";
    out << "scalar pos_scale " << hexd(cfg.pos_scale) << "\n";
    out << "scalar v_scale " << hexd(cfg.v_scale) << "\n";
    out << "scalar delta_scale " << hexd(cfg.delta_scale) << "\n";
    out << "scalar a_scale " << hexd(cfg.a_scale) << "\n";
    out << "scalar mu_center " << hexd(cfg.mu_center) << "\n";
    out << "scalar mu_halfwidth " << hexd(cfg.mu_halfwidth) << "\n";
    out << "scalar w_scale " << hexd(cfg.w_scale) << "\n";
    write_mlp(out, "psi", c.model.psi);
    write_mlp(out, "encoder", c.model.encoder);
    write_mlp(out, "decoder", c.model.decoder);
    write_mlp(out, "residual", c.model.residual);
    write_tensor(out, "gen.WA", c.gen.WA.data(), c.gen.WA.rows(), c.gen.WA.cols());
    write_tensor(out, "gen.bA", c.gen.bA.data(), c.gen.bA.size(), 1);
    write_tensor(out, "gen.WB", c.gen.WB.data(), c.gen.WB.rows(), c.gen.WB.cols());
    write_tensor(out, "gen.bB", c.gen.bB.data(), c.gen.bB.size(), 1);
    out.close();
    if (!out.good()) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string tag, version;
    in >> tag >> version;
    if (tag != "sfkd-checkpoint" || version != "v1")
        throw std::runtime_error("not a v1 checkpoint: " + path);

    Checkpoint c;
    SfkdModelConfig& cfg = c.model.cfg;
    bool gen_global = false;
    std::string kind, key;
    while (in >> kind) {
        if (kind == "int") {
            long v;
            in >> key >> v;
            if (key == "r") cfg.r = static_cast<int>(v);
            else if (key == "d_e") cfg.d_e = static_cast<int>(v);
            else if (key == "fiber_conditioning") cfg.fiber_conditioning = v != 0;
            else if (key == "operator_global") gen_global = v != 0;
            else throw std::runtime_error("checkpoint: unknown int " + key);
        } else if (kind == "scalar") {
            in >> key;
            const double v = read_hexd(in);
            if (key == "beta") cfg.beta = v;
            else if (key == "eps0") cfg.eps0 = v;
            else if (key == "pos_scale") cfg.pos_scale = v;
            else if (key == "v_scale") cfg.v_scale = v;
            else if (key == "delta_scale") cfg.delta_scale = v;
            else if (key == "a_scale") cfg.a_scale = v;
            else if (key == "mu_center") cfg.mu_center = v;
            else if (key == "mu_halfwidth") cfg.mu_halfwidth = v;
            else if (key == "w_scale") cfg.w_scale = v;
            else throw std::runtime_error("checkpoint: unknown scalar " + key);
        } else if (kind == "mlp") {
            in.seekg(-static_cast<long>(kind.size()), std::ios::cur);
            break;
        } else {
            throw std::runtime_error("checkpoint: unexpected token " + kind);
        }
    }
    c.model.psi = read_mlp(in, "psi");
    c.model.encoder = read_mlp(in, "encoder");
    c.model.decoder = read_mlp(in, "decoder");
    c.model.residual = read_mlp(in, "residual");
    cfg.psi_hidden = hidden_dims(c.model.psi);
    cfg.enc_hidden = hidden_dims(c.model.encoder);
    cfg.dec_hidden = hidden_dims(c.model.decoder);
    cfg.res_hidden = hidden_dims(c.model.residual);

    c.gen.r = cfg.r;
    c.gen.d_e = cfg.d_e;
    c.gen.global = gen_global;
    c.gen.WA = read_tensor(in, "gen.WA");
    c.gen.bA = read_tensor(in, "gen.bA").col(0);
    c.gen.WB = read_tensor(in, "gen.WB");
    c.gen.bB = read_tensor(in, "gen.bB").col(0);
    return c;
}

}  // namespace sfkd
