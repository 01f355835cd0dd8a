#include "scalelab/trajectory.hpp"

#include "scalelab/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace scalelab {

void LossTrajectory::validate() const {
    if (losses.size() != times.size()) throw ValidationError("trajectory times and losses misaligned");
    if (!stderrs.empty() && stderrs.size() != losses.size())
        throw ValidationError("trajectory stderrs misaligned");
    for (double l : losses)
        if (!(l >= 0.0)) throw ValidationError("trajectory contains a negative or non-finite loss");
}

void write_trajectory_csv(const LossTrajectory& traj, const std::string& path) {
    traj.validate();
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out << std::setprecision(17);
    out << "step,loss_mean,loss_stderr,n_seeds\n";
    for (std::size_t i = 0; i < traj.size(); ++i) {
        out << traj.times[i] << ',' << traj.losses[i] << ',' << (traj.stderrs.empty() ? 0.0 : traj.stderrs[i])
            << ',' << traj.n_seeds << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

LossTrajectory read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    std::getline(in, line);
    LossTrajectory t;
    t.stderrs.clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        double step = 0, mean = 0, se = 0;
        int n = 1;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ss >> step >> c1 >> mean >> c2 >> se >> c3 >> n)) throw ValidationError("bad trajectory row: " + line);
        t.push(step, mean);
        t.stderrs.push_back(se);
        t.n_seeds = n;
    }
    return t;
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out << j.dump(2) << '\n';
}

namespace {

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

std::string hex(const unsigned char* d, unsigned int n) {
    std::ostringstream ss;
    ss << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < n; ++i) ss << std::setw(2) << static_cast<int>(d[i]);
    return ss.str();
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    }
    void update(const char* p, std::size_t n) {
        if (EVP_DigestUpdate(ctx_.get(), p, n) != 1) throw Error("sha256 update failed");
    }
    std::string finish() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw Error("sha256 final failed");
        return hex(md.data(), len);
    }

private:
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

} // namespace

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.finish();
}

std::string sha256_string(const std::string& data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.finish();
}

} // namespace scalelab
