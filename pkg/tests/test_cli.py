import json

from dimcsim import cli


def write_workload(path, layers, network="testnet", default_bits=4):
    doc = {"network": network,
           "default_precision": {"bits": default_bits, "signed": True},
           "layers": layers}
    path.write_text(json.dumps(doc))
    return str(path)


UNIT_LAYER = {"name": "unit", "kind": "conv", "ich": 1, "och": 1,
              "h": 1, "w": 1, "kh": 1, "kw": 1}


def test_simulate_unit_layer(tmp_path, capsys):
    wl = write_workload(tmp_path / "wl.json", [UNIT_LAYER])
    out = tmp_path / "report.csv"
    assert cli.main(["simulate", wl, "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    row = lines[1].split(",")
    assert row[0] == "unit" and row[1] == "2"  # ops = 2 for the 1x1x1 layer
    assert "1 layer(s)" in capsys.readouterr().out


def test_simulate_lists_ineligible_8bit_layer(tmp_path, capsys):
    layers = [UNIT_LAYER,
              {"name": "wide", "kind": "conv", "ich": 4, "och": 4, "h": 4, "w": 4,
               "kh": 1, "kw": 1, "precision": {"bits": 8, "signed": True}}]
    wl = write_workload(tmp_path / "wl.json", layers)
    out = tmp_path / "report.csv"
    assert cli.main(["simulate", wl, "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2  # header + the eligible row
    captured = capsys.readouterr().out
    assert "ineligible: wide" in captured and "4-bit" in captured


def test_simulate_verify_small_workload(tmp_path):
    layers = [{"name": "small", "kind": "conv", "ich": 3, "och": 5, "h": 5, "w": 5,
               "kh": 3, "kw": 3, "stride": 1, "padding": 1}]
    wl = write_workload(tmp_path / "wl.json", layers)
    out = tmp_path / "report.csv"
    assert cli.main(["simulate", wl, "--verify", "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_simulate_trace_writes_csv(tmp_path):
    wl = write_workload(tmp_path / "wl.json", [UNIT_LAYER])
    tdir = tmp_path / "traces"
    assert cli.main(["simulate", wl, "-o", str(tmp_path / "r.csv"),
                     "--trace", str(tdir)]) == 0
    trace = (tdir / "unit.csv").read_text().splitlines()
    assert trace[0] == "cycle,class,mnemonic"
    assert any("dc.f" in line for line in trace[1:])


def test_simulate_json_format_echoes_configuration(tmp_path):
    wl = write_workload(tmp_path / "wl.json", [UNIT_LAYER])
    out = tmp_path / "report.json"
    assert cli.main(["simulate", wl, "--format", "json", "--area-ratio", "0.5",
                     "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["area_ratio"] == 0.5
    assert doc["layers"][0]["area_ratio"] == 0.5
    assert doc["ineligible"] == []


def test_simulate_missing_file_is_input_error(tmp_path, capsys):
    assert cli.main(["simulate", str(tmp_path / "nope.json"),
                     "-o", str(tmp_path / "r.csv")]) == 2
    assert "error:" in capsys.readouterr().err


def test_empty_workload_is_input_error(tmp_path, capsys):
    wl = write_workload(tmp_path / "wl.json", [])
    assert cli.main(["simulate", wl, "-o", str(tmp_path / "r.csv")]) == 2
    assert "no layers" in capsys.readouterr().err


def test_simulate_malformed_layer_names_entry(tmp_path, capsys):
    wl = write_workload(tmp_path / "wl.json",
                        [UNIT_LAYER, {"name": "broken", "kind": "conv",
                                      "ich": 0, "och": 1}])
    assert cli.main(["simulate", wl, "-o", str(tmp_path / "r.csv")]) == 2
    err = capsys.readouterr().err
    assert "layer 1" in err and "broken" in err


def test_rerun_is_byte_identical(tmp_path):
    wl = write_workload(tmp_path / "wl.json", [
        UNIT_LAYER,
        {"name": "mid", "kind": "conv", "ich": 16, "och": 40, "h": 6, "w": 6,
         "kh": 2, "kw": 2, "padding": 1}])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["simulate", wl, "-o", str(a)]) == 0
    assert cli.main(["simulate", wl, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_verify_does_not_change_cycles(tmp_path):
    layers = [{"name": "small", "kind": "conv", "ich": 4, "och": 6, "h": 4, "w": 4,
               "kh": 2, "kw": 2}]
    wl = write_workload(tmp_path / "wl.json", layers)
    plain, verified = tmp_path / "p.csv", tmp_path / "v.csv"
    assert cli.main(["simulate", wl, "-o", str(plain)]) == 0
    assert cli.main(["simulate", wl, "--verify", "-o", str(verified)]) == 0
    assert plain.read_bytes() == verified.read_bytes()


def test_builtin_resnet50_workload_parses():
    wl = cli.load_workload("resnet50")
    assert wl.network == "resnet50"
    assert len(wl.entries) == 54
    names = [n for n, _ in wl.entries]
    assert names[0] == "conv1" and names[-1] == "fc1000"
    kinds = {layer.kind for _, layer in wl.entries}
    assert kinds == {"conv", "fc"}


def test_sweep_tiling_points(tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "tiling", "--points", "32,64,128,256",
                     "-o", str(out)]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    assert [int(r[1]) for r in rows] == [1, 1, 2, 4]   # tiling factor
    assert all(float(r[5]) > 1 for r in rows)


def test_sweep_grouping_points(tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "grouping", "--points", "16,32,64",
                     "-o", str(out)]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    assert [int(r[2]) for r in rows] == [1, 1, 2]      # group count
    assert all(float(r[5]) > 1 for r in rows)


def test_sweep_rejects_bad_points(tmp_path, capsys):
    assert cli.main(["sweep", "tiling", "--points", "0,8",
                     "-o", str(tmp_path / "s.csv")]) == 2
    assert "error:" in capsys.readouterr().err


def test_asm_disasm_files(tmp_path):
    src = tmp_path / "prog.s"
    src.write_text("dl.m vs1=4 nvec=2 sec=0 mask=0b0011 m_row=7\n"
                   "dc.f vs1=1 vd=2 sh=0 dh=1 m_row=3 bidx=2\n")
    binary = tmp_path / "prog.bin"
    listing = tmp_path / "prog.dis"
    assert cli.main(["asm", str(src), "-o", str(binary)]) == 0
    assert binary.stat().st_size == 8
    assert cli.main(["disasm", str(binary), "-o", str(listing)]) == 0
    assert listing.read_text() == src.read_text()


def test_asm_error_exit_code(tmp_path, capsys):
    src = tmp_path / "bad.s"
    src.write_text("dl.i vs1=99 nvec=1 sec=0 mask=1\n")
    assert cli.main(["asm", str(src), "-o", str(tmp_path / "x.bin")]) == 2
    assert "vs1" in capsys.readouterr().err
